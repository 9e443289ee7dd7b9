#include "jointdiff/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "jointdiff/checkpoint.hpp"
#include "jointdiff/eval_probes.hpp"
#include "jointdiff/idx.hpp"
#include "jointdiff/image_grid.hpp"
#include "jointdiff/sampler.hpp"
#include "jointdiff/shapes.hpp"
#include "jointdiff/trainer.hpp"

namespace fs = std::filesystem;

namespace jointdiff {

std::pair<Dataset, Dataset> load_datasets(const DataConfig& data, const ModelSpec& spec) {
  if (data.source == "idx") {
    auto opt_path = [](const std::string& p) -> std::optional<fs::path> {
      if (p.empty()) return std::nullopt;
      return fs::path(p);
    };
    Dataset train = load_idx(data.train_images, opt_path(data.train_labels), spec.head.num_classes);
    Dataset test = data.test_images.empty()
                       ? train
                       : load_idx(data.test_images, opt_path(data.test_labels), spec.head.num_classes);
    return {std::move(train), std::move(test)};
  }
  const BackgroundStyle bg = data.background == "striped" ? BackgroundStyle::striped : BackgroundStyle::flat;
  const int side = spec.unet.image_side;
  const int k = spec.head.num_classes;
  if (spec.unet.input_channels != 1)
    throw ContractViolation("synthetic shapes are grayscale; set unet.input_channels = 1");
  return {generate_synthetic_shapes(data.train_size, side, k, data.seed, bg),
          generate_synthetic_shapes(data.test_size, side, k, data.seed + 0x9e3779b9ULL, bg)};
}

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Config file (key = value lines)")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override one config key: --set key=value (repeatable)");
  sub->add_option("--out", c.out_dir, "Output directory (checkpoints/, samples/, metrics/)");
  sub->add_option("--seed", c.seed, "Seed for every random choice of this run");
  sub->add_flag("-q,--quiet", c.quiet, "No progress on the error stream");
}

ConfigBundle resolve_config(const Common& c) {
  ConfigBundle b = c.config.empty() ? ConfigBundle{} : load_config(c.config);
  for (const auto& s : c.sets) apply_override(b, s);
  if (c.seed) {
    b.train.seed = *c.seed;
    b.sampler.seed = *c.seed;
  }
  b.validate();
  return b;
}

struct Paths {
  fs::path checkpoints, samples, metrics;
};

Paths make_paths(const Common& c) {
  Paths p{fs::path(c.out_dir) / "checkpoints", fs::path(c.out_dir) / "samples",
          fs::path(c.out_dir) / "metrics"};
  fs::create_directories(p.checkpoints);
  fs::create_directories(p.samples);
  fs::create_directories(p.metrics);
  return p;
}

std::function<void(const std::string&)> progress_to(std::ostream& err, bool quiet) {
  if (quiet) return {};
  return [&err](const std::string& s) { err << s << '\n'; };
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void write_trace(const fs::path& path, const std::vector<TraceRow>& rows) {
  std::ostringstream s;
  s << "t,sample,target,confidence,confidence_after,decision,decision_after\n";
  for (const auto& r : rows)
    s << r.t << ',' << r.sample << ',' << r.target << ',' << fmt(r.confidence, "%.9g") << ','
      << fmt(r.confidence_after, "%.9g") << ',' << r.decision << ',' << r.decision_after << '\n';
  write_text(path, s.str());
}

int grid_columns(int n) { return std::max(1, std::min(n, 8)); }

// --- subcommand bodies -------------------------------------------------------

enum class TrainKind { joint, semi, baseline };

int do_train(const Common& c, TrainKind kind, std::optional<double> labeled_fraction, bool noisy,
             std::ostream& out, std::ostream& err) {
  ConfigBundle b = resolve_config(c);
  if (labeled_fraction) {
    if (!(*labeled_fraction > 0.0 && *labeled_fraction <= 1.0))
      throw ContractViolation("--labeled-fraction must lie in (0, 1]");
    b.train.labeled_fraction = *labeled_fraction;
  }
  if (noisy) b.train.noisy_classifier = true;
  const Paths p = make_paths(c);
  auto [train, test] = load_datasets(b.data, b.model);
  const char* tag = kind == TrainKind::joint ? "train" : kind == TrainKind::semi ? "train_semi" : "train_baseline";
  TrainOutputs o;
  o.checkpoint_dir = p.checkpoints / tag;
  o.metrics_csv = p.metrics / (std::string(tag) + ".csv");
  if (test.labeled()) o.holdout = &test;
  o.progress = progress_to(err, c.quiet);
  TrainResult r = kind == TrainKind::joint  ? train_joint(train, b.model, b.train, o)
                  : kind == TrainKind::semi ? train_semi_supervised(train, b.model, b.train, o)
                                            : train_standalone_classifier(train, b.model, b.train, o);
  const JointModel model = JointModel::from_checkpoint(r.final);
  out << "checkpoint," << (*o.checkpoint_dir / "final.ckpt").string() << '\n';
  if (test.labeled()) out << "test_accuracy," << fmt(accuracy(model, test)) << '\n';
  if (kind == TrainKind::semi) {
    out << "class_loss_steps," << r.stats.class_loss_steps << '\n';
    out << "buffer_pushes," << r.stats.buffer_pushes << '\n';
    out << "buffer_consumed," << r.stats.buffer_consumed << '\n';
  }
  return kExitOk;
}

int do_adapt(const Common& c, const std::string& ckpt_path, std::ostream& out, std::ostream& err) {
  ConfigBundle b = resolve_config(c);
  const Checkpoint src = load_checkpoint(ckpt_path);
  const Paths p = make_paths(c);
  ModelSpec spec{src.unet, src.head, src.schedule};
  auto [target, target_test] = load_datasets(b.data, spec);
  const JointModel before = JointModel::from_checkpoint(src);
  TrainOutputs o;
  o.checkpoint_dir = p.checkpoints / "adapt";
  o.metrics_csv = p.metrics / "adapt.csv";
  o.progress = progress_to(err, c.quiet);
  TrainResult r = adapt_domain(src, target.without_labels(), b.train, o);
  if (b.train.total_steps == 0) {
    fs::create_directories(*o.checkpoint_dir);
    save_checkpoint(r.final, *o.checkpoint_dir / "final.ckpt");
  }
  out << "checkpoint," << (*o.checkpoint_dir / "final.ckpt").string() << '\n';
  if (target_test.labeled()) {
    const JointModel after = JointModel::from_checkpoint(r.final);
    out << "target_accuracy_before," << fmt(accuracy(before, target_test)) << '\n';
    out << "target_accuracy_after," << fmt(accuracy(after, target_test)) << '\n';
  }
  return kExitOk;
}

struct SampleFlags {
  std::string checkpoint;
  std::optional<std::string> mode;
  std::optional<int> target;
  std::optional<float> alpha, scale;
  std::optional<int> n, opt_steps;
  bool trace = false;
};

int do_sample(const Common& c, const SampleFlags& f, std::ostream& out, std::ostream& err) {
  ConfigBundle b = resolve_config(c);
  if (f.mode) b.sampler.mode = parse_mode(*f.mode);
  if (f.target) b.sampler.target_class = *f.target;
  if (f.alpha) b.sampler.alpha = *f.alpha;
  if (f.scale) b.sampler.scale = *f.scale;
  if (f.n) b.sampler.n = *f.n;
  if (f.opt_steps) b.sampler.opt_steps = *f.opt_steps;
  b.sampler.validate();
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const JointModel model = JointModel::from_checkpoint(ck);
  const NoiseSchedule sched = NoiseSchedule::from_params(model.spec().schedule);
  const Paths p = make_paths(c);
  if (!c.quiet) err << "sampling " << b.sampler.n << " images (" << mode_name(b.sampler.mode) << ")\n";
  const SampleResult r = sample(model, sched, b.sampler, f.trace);
  const fs::path grid = p.samples / "samples.pgm";
  write_image_grid(r.images, grid_columns(b.sampler.n), grid);
  out << "grid," << grid.string() << '\n';
  if (f.trace) {
    const fs::path trace = p.metrics / "sample_trace.csv";
    write_trace(trace, r.trace);
    out << "trace," << trace.string() << '\n';
  }
  return kExitOk;
}

struct CounterfactualFlags {
  std::string checkpoint;
  std::string input;
  int target = 0;
  double noise_frac = 0.2;
  std::optional<float> alpha;
  std::optional<int> n, opt_steps;
  bool trace = false;
};

int do_counterfactual(const Common& c, const CounterfactualFlags& f, std::ostream& out, std::ostream& err) {
  ConfigBundle b = resolve_config(c);
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const JointModel model = JointModel::from_checkpoint(ck);
  const NoiseSchedule sched = NoiseSchedule::from_params(model.spec().schedule);
  Dataset inputs;
  if (!f.input.empty()) {
    inputs = load_idx(f.input);
  } else {
    inputs = load_datasets(b.data, model.spec()).second;
  }
  const int n = std::min(inputs.size(), f.n.value_or(inputs.size()));
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  const Tensor x0 = inputs.batch(idx);
  const std::vector<int> targets(static_cast<std::size_t>(n), f.target);
  const float alpha = f.alpha.value_or(b.sampler.alpha);
  const Paths p = make_paths(c);
  if (!c.quiet) err << "editing " << n << " inputs toward class " << f.target << '\n';
  const auto r = counterfactual(model, sched, x0, targets, f.noise_frac, alpha, b.sampler.seed,
                                f.opt_steps.value_or(b.sampler.opt_steps), f.trace);
  const int cols = grid_columns(n);
  write_image_grid(r.original, cols, p.samples / "counterfactual_original.pgm");
  write_image_grid(r.edited, cols, p.samples / "counterfactual_edited.pgm");
  write_image_grid(r.difference, cols, p.samples / "counterfactual_difference.pgm");
  const auto before = model.predict(r.original);
  const auto after = model.predict(r.edited);
  std::ostringstream csv;
  csv << "index,target,decision_before,decision_after,flipped,mean_abs_change\n";
  int flips = 0;
  const std::size_t per = x0.size() / static_cast<std::size_t>(std::max(n, 1));
  auto d = r.difference.data();
  for (int i = 0; i < n; ++i) {
    double change = 0;
    for (std::size_t j = 0; j < per; ++j) change += std::abs(d[i * per + j]);
    const bool flipped = after[static_cast<std::size_t>(i)] == f.target;
    flips += flipped ? 1 : 0;
    csv << i << ',' << f.target << ',' << before[static_cast<std::size_t>(i)] << ','
        << after[static_cast<std::size_t>(i)] << ',' << (flipped ? 1 : 0) << ','
        << fmt(change / static_cast<double>(per)) << '\n';
  }
  write_text(p.metrics / "counterfactual.csv", csv.str());
  if (f.trace) write_trace(p.metrics / "counterfactual_trace.csv", r.trace);
  out << "start_timestep," << r.start_timestep << '\n';
  out << "flip_rate," << fmt(n ? static_cast<double>(flips) / n : 0.0) << '\n';
  return kExitOk;
}

int do_probe(const Common& c, const std::string& ckpt_path, std::ostream& out, std::ostream& err) {
  ConfigBundle b = resolve_config(c);
  const JointModel model = JointModel::from_checkpoint(load_checkpoint(ckpt_path));
  const NoiseSchedule sched = NoiseSchedule::from_params(model.spec().schedule);
  const Dataset data = load_datasets(b.data, model.spec()).second;
  if (data.num_attributes() == 0) throw ContractViolation("probe: the dataset has no attribute table");
  const Paths p = make_paths(c);
  std::ostringstream csv;
  csv << "t,attribute,auc\n";
  ProbeConfig pc;
  pc.max_iterations = b.eval.probe_max_iterations;
  pc.seed = b.eval.noise_seed;
  for (int t : probe_timesteps(sched.steps())) {
    const FeatureMatrix f = extract_features(model, data, t, sched, b.eval.noise_seed);
    for (int a = 0; a < data.num_attributes(); ++a) {
      std::vector<int> y(static_cast<std::size_t>(data.size()));
      for (int i = 0; i < data.size(); ++i) y[static_cast<std::size_t>(i)] = data.attribute(i, a);
      const ProbeResult r = fit_logistic_probe(f, y, pc);
      csv << t << ',' << data.attribute_names[static_cast<std::size_t>(a)] << ',' << fmt(r.auc) << '\n';
    }
    if (!c.quiet) err << "probed t = " << t << '\n';
  }
  const fs::path path = p.metrics / "probe_auc.csv";
  write_text(path, csv.str());
  out << csv.str();
  return kExitOk;
}

int do_eval(const Common& c, const std::string& ckpt_path, std::ostream& out, std::ostream& err) {
  ConfigBundle b = resolve_config(c);
  const JointModel model = JointModel::from_checkpoint(load_checkpoint(ckpt_path));
  const NoiseSchedule sched = NoiseSchedule::from_params(model.spec().schedule);
  const Dataset test = load_datasets(b.data, model.spec()).second;
  const Paths p = make_paths(c);
  std::ostringstream csv;
  csv << "metric,value\n";
  if (test.labeled()) csv << "accuracy," << fmt(accuracy(model, test)) << '\n';
  if (!c.quiet) err << "sampling " << b.eval.samples << " images for generation metrics\n";
  const Tensor gen = sample_unconditional(model, sched, b.eval.samples, b.sampler.seed);
  const FeatureMatrix real = pooled_features(model, test.all_images());
  const FeatureMatrix fake = pooled_features(model, gen);
  const PrecisionRecall pr = precision_recall(real, fake, b.eval.knn);
  csv << "feature_frechet," << fmt(feature_frechet(real, fake)) << '\n';
  csv << "precision," << fmt(pr.precision) << '\n';
  csv << "recall," << fmt(pr.recall) << '\n';
  csv << "sample_count," << b.eval.samples << '\n';
  write_text(p.metrics / "eval.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint diffusion model: training, sampling and evaluation", "jointdiff"};
  app.require_subcommand(1, 1);

  Common common;
  std::optional<double> labeled_fraction;
  bool noisy = false;
  std::string checkpoint;
  SampleFlags sf;
  CounterfactualFlags cf;

  auto* train = app.add_subcommand("train", "Joint training (diffusion + classifier)");
  add_common(train, common);
  train->add_flag("--noisy", noisy, "Add the noisy-classifier term");

  auto* semi = app.add_subcommand("train-semi", "Semi-supervised training with a label buffer");
  add_common(semi, common);
  semi->add_option("--labeled-fraction", labeled_fraction, "Fraction of training labels kept");
  semi->add_flag("--noisy", noisy, "Add the noisy-classifier term");

  auto* base = app.add_subcommand("train-baseline", "Standalone classifier (same encoder and head)");
  add_common(base, common);

  auto* adapt = app.add_subcommand("adapt", "Diffusion-only adaptation to unlabeled target data");
  add_common(adapt, common);
  adapt->add_option("--checkpoint", checkpoint, "Source checkpoint")->required()->check(CLI::ExistingFile);

  auto* samp = app.add_subcommand("sample", "Generate an image grid");
  add_common(samp, common);
  samp->add_option("--checkpoint", sf.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  samp->add_option("--mode", sf.mode, "unconditional | guided | optimized")
      ->check(CLI::IsMember({"unconditional", "guided", "optimized"}));
  samp->add_option("--class", sf.target, "Target class (guided / optimized)");
  samp->add_option("--alpha", sf.alpha, "Representation step size (optimized)");
  samp->add_option("--scale", sf.scale, "Guidance scale (guided)");
  samp->add_option("--n", sf.n, "Number of samples");
  samp->add_option("--opt-steps", sf.opt_steps, "Representation steps per timestep");
  samp->add_flag("--trace", sf.trace, "Write per-step classifier confidences");

  auto* cfx = app.add_subcommand("counterfactual", "Edit inputs toward a target class");
  add_common(cfx, common);
  cfx->add_option("--checkpoint", cf.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  cfx->add_option("--input", cf.input, "IDX image file (default: the configured test split)")
      ->check(CLI::ExistingFile);
  cfx->add_option("--target", cf.target, "Requested class")->required();
  cfx->add_option("--noise-frac", cf.noise_frac, "Fraction of the forward chain to noise")
      ->check(CLI::Range(0.0, 1.0));
  cfx->add_option("--alpha", cf.alpha, "Representation step size");
  cfx->add_option("--n", cf.n, "Use only the first n inputs");
  cfx->add_option("--opt-steps", cf.opt_steps, "Representation steps per timestep");
  cfx->add_flag("--trace", cf.trace, "Write per-step classifier confidences");

  auto* probe = app.add_subcommand("probe", "Per-timestep logistic probes (AUC table)");
  add_common(probe, common);
  probe->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Accuracy and generation metrics");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (const auto* s : app.get_subcommands()) failed = s;
    err << failed->help();
    return kExitUsage;
  }

  try {
    if (train->parsed()) return do_train(common, TrainKind::joint, std::nullopt, noisy, out, err);
    if (semi->parsed()) return do_train(common, TrainKind::semi, labeled_fraction, noisy, out, err);
    if (base->parsed()) return do_train(common, TrainKind::baseline, std::nullopt, false, out, err);
    if (adapt->parsed()) return do_adapt(common, checkpoint, out, err);
    if (samp->parsed()) return do_sample(common, sf, out, err);
    if (cfx->parsed()) return do_counterfactual(common, cf, out, err);
    if (probe->parsed()) return do_probe(common, checkpoint, out, err);
    if (eval->parsed()) return do_eval(common, checkpoint, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomainError;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace jointdiff
