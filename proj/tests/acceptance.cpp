// Acceptance run: one PASS/FAIL line per criterion on the standard output.
//
//   acceptance [--only 4,5] [--cache DIR]
//
// Trained models are shared between criteria and, with --cache, kept on disk
// so later runs skip training.  Exit status is 0 only when every selected
// criterion passes.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jointdiff/autodiff.hpp"
#include "jointdiff/checkpoint.hpp"
#include "jointdiff/cli.hpp"
#include "jointdiff/eval_probes.hpp"
#include "jointdiff/gradcheck.hpp"
#include "jointdiff/losses.hpp"
#include "jointdiff/ops.hpp"
#include "jointdiff/sampler.hpp"
#include "jointdiff/shapes.hpp"
#include "jointdiff/trainer.hpp"
#include "test_util.hpp"

using namespace jointdiff;
namespace fs = std::filesystem;
using jointdiff::testing::random_tensor;

namespace {

// ---------------------------------------------------------------- preset

constexpr int kSide = 16;
constexpr int kClasses = 3;
constexpr int kTrainSize = 2000;
constexpr int kTestSize = 500;
constexpr std::uint64_t kTrainDataSeed = 1;
constexpr std::uint64_t kTestDataSeed = 2;
constexpr std::uint64_t kJudgeDataSeed = 3;
constexpr std::uint64_t kTargetTrainSeed = 11;
constexpr std::uint64_t kTargetTestSeed = 12;
constexpr std::uint64_t kJudgeSeed = 101;
const std::uint64_t kSeeds[3] = {1, 2, 3};

ModelSpec desk_spec() {
  ModelSpec s;
  s.unet.base_channels = 8;
  s.unet.image_side = kSide;
  s.head.num_classes = kClasses;
  return s;
}

TrainConfig desk_train(std::uint64_t seed) {
  TrainConfig c;
  c.total_steps = 1200;
  c.batch_size = 32;
  c.learning_rate = 1e-3f;
  c.seed = seed;
  c.log_interval = 200;
  c.checkpoint_interval = 1 << 30;
  c.check_routing = true;
  return c;
}

TrainConfig semi_train(std::uint64_t seed) {
  TrainConfig c = desk_train(seed);
  c.total_steps = 3000;
  c.labeled_fraction = 0.05;
  // A full-batch buffer fills about once per 20 steps at 5% labels; a
  // smaller one gives the classifier enough updates within the budget.
  c.buffer_capacity = 8;
  return c;
}

// Diffusion-only updates drift the features the frozen head reads; a short,
// gentle run keeps the texture adjustment without that drift.
TrainConfig adapt_train(std::uint64_t seed) {
  TrainConfig c = desk_train(seed);
  c.total_steps = 100;
  c.learning_rate = 1e-4f;
  c.log_interval = 25;
  return c;
}

// ---------------------------------------------------------------- plumbing

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void note(const std::string& s) { std::cerr << "  " << s << std::endl; }

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Models {
 public:
  explicit Models(std::optional<fs::path> cache) : cache_(std::move(cache)) {
    if (cache_) fs::create_directories(*cache_);
  }

  const Dataset& train() { return get(train_, [] { return generate_synthetic_shapes(kTrainSize, kSide, kClasses, kTrainDataSeed); }); }
  const Dataset& test() { return get(test_, [] { return generate_synthetic_shapes(kTestSize, kSide, kClasses, kTestDataSeed); }); }
  const Dataset& target_train() {
    return get(target_train_, [] {
      return generate_synthetic_shapes(kTrainSize, kSide, kClasses, kTargetTrainSeed, BackgroundStyle::striped);
    });
  }
  const Dataset& target_test() {
    return get(target_test_, [] {
      return generate_synthetic_shapes(kTestSize, kSide, kClasses, kTargetTestSeed, BackgroundStyle::striped);
    });
  }

  const Checkpoint& joint(std::uint64_t seed) {
    return model("joint_" + std::to_string(seed), [&] { return train_joint(train(), desk_spec(), desk_train(seed)); });
  }
  // Trained with the noisy-classifier term, so the head also reads noised representations.
  const Checkpoint& joint_noisy(std::uint64_t seed) {
    return model("joint_noisy_" + std::to_string(seed), [&] {
      auto cfg = desk_train(seed);
      cfg.noisy_classifier = true;
      cfg.total_steps = 2400;
      return train_joint(train(), desk_spec(), cfg);
    });
  }
  const Checkpoint& standalone(std::uint64_t seed) {
    return model("standalone_" + std::to_string(seed),
                 [&] { return train_standalone_classifier(train(), desk_spec(), desk_train(seed)); });
  }
  const Checkpoint& semi(std::uint64_t seed) {
    return model("semi_" + std::to_string(seed),
                 [&] { return train_semi_supervised(train(), desk_spec(), semi_train(seed)); });
  }
  // Standalone classifier that only ever sees the labeled 5%, with the same step budget.
  const Checkpoint& standalone_semi(std::uint64_t seed) {
    return model("standalone_semi_" + std::to_string(seed), [&] {
      const auto cfg = semi_train(seed);
      const auto mask = balanced_label_mask(train(), cfg.labeled_fraction, cfg.seed);
      std::vector<int> idx;
      for (int i = 0; i < train().size(); ++i)
        if (mask[static_cast<std::size_t>(i)]) idx.push_back(i);
      return train_standalone_classifier(train().subset(idx), desk_spec(), cfg);
    });
  }
  const Checkpoint& adapted(std::uint64_t seed) {
    return model("adapted_" + std::to_string(seed),
                 [&] { return adapt_domain(joint_noisy(seed), target_train().without_labels(), adapt_train(seed)); });
  }
  // Independent classifier used to judge generated images: its own data, its own init.
  const Checkpoint& judge() {
    return model("judge", [&] {
      const auto data = generate_synthetic_shapes(kTrainSize, kSide, kClasses, kJudgeDataSeed);
      return train_standalone_classifier(data, desk_spec(), desk_train(kJudgeSeed));
    });
  }

  double training_seconds() const { return training_seconds_; }

 private:
  template <class F>
  const Dataset& get(std::optional<Dataset>& slot, F make) {
    if (!slot) slot = make();
    return *slot;
  }

  const Checkpoint& model(const std::string& key, const std::function<TrainResult()>& run) {
    if (auto it = models_.find(key); it != models_.end()) return it->second;
    if (cache_ && fs::exists(*cache_ / (key + ".ckpt"))) {
      note("loading cached " + key);
      return models_.emplace(key, load_checkpoint(*cache_ / (key + ".ckpt"))).first->second;
    }
    note("training " + key);
    const auto t0 = Clock::now();
    auto r = run();
    const double s = seconds_since(t0);
    training_seconds_ += s;
    note(key + " trained in " + fmt(s, 3) + " s");
    if (cache_) save_checkpoint(r.final, *cache_ / (key + ".ckpt"));
    return models_.emplace(key, std::move(r.final)).first->second;
  }

  std::optional<fs::path> cache_;
  std::optional<Dataset> train_, test_, target_train_, target_test_;
  std::map<std::string, Checkpoint> models_;
  double training_seconds_ = 0.0;
};

double accuracy_of(const Checkpoint& c, const Dataset& d) { return accuracy(JointModel::from_checkpoint(c), d); }

bool within_budget(double seconds, double budget, std::string& detail) {
  detail += " time=" + fmt(seconds, 3) + "s (budget " + fmt(budget, 3) + "s)";
  return seconds < budget;
}

// ---------------------------------------------------------------- C1

Tensor probe_sum(const Tensor& y, std::uint64_t seed) {
  return ops::sum(ops::mul(y, random_tensor(y.shape(), seed)));
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  struct Case {
    std::string name;
    std::function<Tensor()> f;
    std::vector<Tensor> params;
  };
  std::vector<Case> cases;
  {
    Tensor x = random_tensor({2, 3, 5, 5}, 11), w = random_tensor({4, 3, 3, 3}, 12), b = random_tensor({4}, 13);
    cases.push_back({"conv2d", [=] { return probe_sum(ops::conv2d(x, w, b), 99); }, {x, w, b}});
    Tensor x2 = random_tensor({2, 3, 6, 6}, 14);
    cases.push_back({"conv2d_stride2", [=] { return probe_sum(ops::conv2d(x2, w, b, 2), 98); }, {x2, w, b}});
  }
  {
    Tensor x = random_tensor({2, 3, 4, 4}, 18);
    cases.push_back({"upsample", [=] { return probe_sum(ops::upsample_nearest2x(x), 96); }, {x}});
  }
  {
    Tensor x = random_tensor({4, 8}, 19), w = random_tensor({5, 8}, 20), b = random_tensor({5}, 21);
    cases.push_back({"dense", [=] { return probe_sum(ops::dense(x, w, b), 95); }, {x, w, b}});
  }
  {
    Tensor a = random_tensor({2, 3, 4, 4}, 22), c = random_tensor({2, 3}, 23), d = random_tensor({2, 3, 4, 4}, 24);
    cases.push_back({"add_sub_mul_scale",
                     [=] { return probe_sum(ops::scale(ops::mul(ops::sub(ops::add(a, c), d), a), 1.5f), 94); },
                     {a, c, d}});
  }
  {
    Tensor a = random_tensor({2, 2, 3, 3}, 25), b = random_tensor({2, 3, 3, 3}, 26);
    cases.push_back({"concat", [=] { return probe_sum(ops::concat_channels(a, b), 93); }, {a, b}});
  }
  {
    Tensor x = random_tensor({8, 10}, 29, 0.05f, 1.0f);
    auto v = x.data();
    for (std::size_t i = 0; i < v.size(); i += 2) v[i] = -v[i];
    cases.push_back({"leaky_relu", [=] { return probe_sum(ops::leaky_relu(x, 0.01f), 91); }, {x}});
    Tensor s = random_tensor({8, 10}, 30, -3.0f, 3.0f);
    cases.push_back({"silu", [=] { return probe_sum(ops::silu(s), 90); }, {s}});
  }
  {
    Tensor x = random_tensor({2, 4, 3, 3}, 31), g = random_tensor({4}, 32, 0.5f, 1.5f), b = random_tensor({4}, 33);
    cases.push_back({"group_norm", [=] { return probe_sum(ops::group_norm(x, g, b, 2), 89); }, {x, g, b}});
    cases.push_back({"global_avg_pool", [=] { return probe_sum(ops::global_avg_pool(x), 88); }, {x}});
  }
  {
    Tensor x = random_tensor({16, 5}, 35, -2.0f, 2.0f);
    std::vector<int> y(16);
    for (int i = 0; i < 16; ++i) y[i] = i % 5;
    cases.push_back({"log_softmax", [=] { return probe_sum(ops::log_softmax(x), 87); }, {x}});
    cases.push_back({"nll", [=] { return ops::nll(ops::log_softmax(x), y); }, {x}});
  }
  {
    Tensor x = random_tensor({8, 9}, 36);
    cases.push_back({"sum", [=] { return ops::sum(ops::mul(x, x)); }, {x}});
    cases.push_back({"mean", [=] { return ops::mean(ops::mul(x, x)); }, {x}});
  }

  double worst_primitive = 0.0;
  std::string worst_name;
  bool coords_ok = true;
  for (auto& c : cases) {
    GradCheckOptions o;
    o.max_coords = 64;
    const auto r = finite_difference_check(c.f, c.params, o);
    coords_ok = coords_ok && r.coords_checked >= 64;
    if (r.max_relative_error > worst_primitive) {
      worst_primitive = r.max_relative_error;
      worst_name = c.name;
    }
  }

  // Full joint loss (diffusion + clean and noisy classifier terms) on 4 images.
  auto spec = jointdiff::testing::tiny_spec();
  spec.unet.base_channels = 8;
  JointModel model(spec, 7);
  const auto sched = NoiseSchedule::from_params(spec.schedule);
  const Tensor x0 = random_tensor({4, 1, 8, 8}, 6);
  const std::vector<int> labels = {0, 1, 2, 0};
  JointLossConfig lc;
  lc.noisy_classifier = true;
  auto params = model.parameters();
  GradCheckOptions o;
  o.max_coords = 96;
  o.seed = 1;
  o.eps = std::cbrt(std::numeric_limits<float>::epsilon());
  const auto joint = finite_difference_check(
      [&] {
        std::mt19937_64 rng(11);
        return joint_loss(model, x0, std::span<const int>(labels), sched, lc, rng).total;
      },
      params, o);

  Outcome out;
  out.detail = "primitives=" + std::to_string(cases.size()) + " worst=" + fmt(worst_primitive, 3) + " (" +
               worst_name + ") joint_loss=" + fmt(joint.max_relative_error, 3) + " over " +
               std::to_string(joint.coords_checked) + " coords, bound 1e-3";
  out.pass = coords_ok && joint.coords_checked >= 64 && worst_primitive < 1e-3 && joint.max_relative_error < 1e-3;
  out.pass = within_budget(seconds_since(t0), 120.0, out.detail) && out.pass;
  return out;
}

// ---------------------------------------------------------------- C2

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome reduction_identities() {
  const auto t0 = Clock::now();
  const auto dir = fs::temp_directory_path() / "jointdiff_acceptance_c2";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ModelSpec spec = desk_spec();
  spec.schedule.steps = 200;
  save_checkpoint(JointModel(spec, 5).to_checkpoint(), dir / "model.ckpt");
  auto run = [&](const std::string& name, std::vector<std::string> extra) {
    std::vector<std::string> args = {"sample", "--checkpoint", (dir / "model.ckpt").string(), "--n", "8",
                                     "--seed", "42", "--out", (dir / name).string(), "-q"};
    args.insert(args.end(), extra.begin(), extra.end());
    std::ostringstream o, e;
    if (run_cli(args, o, e) != 0) throw std::runtime_error("sample failed: " + e.str());
    return slurp(dir / name / "samples" / "samples.pgm");
  };
  const auto base = run("unconditional", {"--mode", "unconditional"});
  const auto alpha0 = run("alpha0", {"--mode", "optimized", "--class", "1", "--alpha", "0"});
  const auto scale0 = run("scale0", {"--mode", "guided", "--class", "2", "--scale", "0"});
  const auto alpha1 = run("alpha1", {"--mode", "optimized", "--class", "1", "--alpha", "1"});
  fs::remove_all(dir);
  Outcome out;
  out.pass = !base.empty() && base == alpha0 && base == scale0;
  out.detail = std::string("alpha0 ") + (base == alpha0 ? "identical" : "differs") + ", scale0 " +
               (base == scale0 ? "identical" : "differs") + " (" + std::to_string(base.size()) +
               " bytes); alpha1 " + (base == alpha1 ? "identical" : "differs") + " (control)";
  out.pass = within_budget(seconds_since(t0), 60.0, out.detail) && out.pass;
  return out;
}

// ---------------------------------------------------------------- C3

Outcome forward_chain() {
  const auto sched = NoiseSchedule::from_params(desk_spec().schedule);
  const int t = 25, draws = 10000;
  const double x0s[] = {-1.0, -0.3, 0.0, 0.5, 1.0};
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd;
  const double ab = sched.alpha_bar(t);
  const double mu_scale = std::sqrt(ab), var = 1.0 - ab;
  double worst_mean_z = 0.0, worst_var_z = 0.0;
  for (double x0 : x0s) {
    double s = 0.0, ss = 0.0;
    for (int d = 0; d < draws; ++d) {
      double x = x0;
      for (int k = 1; k <= t; ++k) x = std::sqrt(sched.alpha(k)) * x + std::sqrt(sched.beta(k)) * nd(rng);
      s += x;
      ss += x * x;
    }
    const double m = s / draws;
    const double v = (ss - draws * m * m) / (draws - 1);
    worst_mean_z = std::max(worst_mean_z, std::abs(m - mu_scale * x0) / std::sqrt(var / draws));
    worst_var_z = std::max(worst_var_z, std::abs(v - var) / (var * std::sqrt(2.0 / (draws - 1))));
  }
  // The library's closed form must produce the same marginal.
  const Tensor x0 = Tensor(Shape{1, 1, 1, 5}, std::vector<float>(std::begin(x0s), std::end(x0s)));
  const Tensor eps = random_tensor({1, 1, 1, 5}, 3);
  const Tensor xt = forward_noise(x0, t, eps, sched);
  double closed_gap = 0.0;
  for (int i = 0; i < 5; ++i)
    closed_gap = std::max(closed_gap, std::abs(xt[i] - (mu_scale * x0s[i] + std::sqrt(var) * eps[i])));
  Outcome out;
  out.pass = worst_mean_z < 3.0 && worst_var_z < 3.0 && closed_gap < 1e-6;
  out.detail = "t=25 draws=10000 worst |mean z|=" + fmt(worst_mean_z, 3) + " worst |var z|=" + fmt(worst_var_z, 3) +
               " (bound 3) closed-form gap=" + fmt(closed_gap, 2);
  return out;
}

// ---------------------------------------------------------------- C4

Outcome joint_vs_standalone(Models& m) {
  const auto t0 = Clock::now();
  std::vector<double> joint, standalone;
  std::string per_seed;
  for (auto s : kSeeds) {
    joint.push_back(accuracy_of(m.joint(s), m.test()));
    standalone.push_back(accuracy_of(m.standalone(s), m.test()));
    per_seed += " s" + std::to_string(s) + "=" + fmt(joint.back(), 3) + "/" + fmt(standalone.back(), 3);
  }
  const double j = median3(joint), c = median3(standalone);
  Outcome out;
  out.pass = j >= c - 0.01 && j >= 0.95;
  out.detail = "median joint=" + fmt(j) + " standalone=" + fmt(c) + " (joint/standalone" + per_seed + ")";
  out.pass = within_budget(seconds_since(t0), 1200.0, out.detail) && out.pass;
  return out;
}

// ---------------------------------------------------------------- C5

Outcome sampling_adherence(Models& m) {
  const auto& ckpt = m.joint_noisy(kSeeds[0]);
  const auto& judge_ckpt = m.judge();
  const auto t0 = Clock::now();
  const JointModel model = JointModel::from_checkpoint(ckpt);
  const JointModel judge = JointModel::from_checkpoint(judge_ckpt);
  const auto sched = NoiseSchedule::from_params(model.spec().schedule);
  const double judge_acc = accuracy(judge, m.test());
  const std::vector<float> grid = {0.0f, 10.0f, 30.0f, 60.0f, 100.0f, 150.0f, 200.0f, 300.0f, 1000.0f};
  const int per_class = 32;
  std::vector<double> agree;
  for (float alpha : grid) {
    int hits = 0;
    for (int y = 0; y < kClasses; ++y) {
      const Tensor x = sample_conditional_optimized(model, sched, per_class, y, alpha, 500 + y);
      for (int p : judge.predict(x)) hits += p == y;
    }
    agree.push_back(double(hits) / (per_class * kClasses));
    note("alpha " + fmt(alpha) + " agreement " + fmt(agree.back(), 3));
  }
  const auto best = static_cast<std::size_t>(std::max_element(agree.begin(), agree.end()) - agree.begin());
  int inversions = 0;
  for (std::size_t i = 1; i <= best; ++i) inversions += agree[i] < agree[i - 1];
  Outcome out;
  out.pass = agree[best] - agree[0] >= 0.30 && inversions <= 1;
  out.detail = "judge acc=" + fmt(judge_acc, 3) + " agreement by alpha:";
  for (std::size_t i = 0; i < grid.size(); ++i) out.detail += " " + fmt(grid[i]) + "->" + fmt(agree[i], 3);
  out.detail += " gain=" + fmt(agree[best] - agree[0], 3) + " inversions=" + std::to_string(inversions);
  out.pass = within_budget(seconds_since(t0), 600.0, out.detail) && out.pass;
  return out;
}

// ---------------------------------------------------------------- C6

constexpr float kCounterfactualAlpha = 300.0f;

Outcome counterfactual_flips(Models& m) {
  const auto& ckpt = m.joint_noisy(kSeeds[0]);
  const auto t0 = Clock::now();
  const JointModel model = JointModel::from_checkpoint(ckpt);
  const auto sched = NoiseSchedule::from_params(model.spec().schedule);
  const int n = 60;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor x0 = m.test().batch(idx);
  std::vector<int> targets(n);
  for (int i = 0; i < n; ++i) targets[i] = (m.test().labels[i] + 1 + i % 2) % kClasses;
  auto mean_abs = [](const Tensor& d) {
    double s = 0.0;
    for (float v : d.data()) s += std::abs(v);
    return s / static_cast<double>(d.size());
  };
  const auto edit = counterfactual(model, sched, x0, targets, 0.2, kCounterfactualAlpha, 77);
  const auto full = counterfactual(model, sched, x0, targets, 1.0, kCounterfactualAlpha, 77);
  const auto after = model.predict(edit.edited);
  int flips = 0;
  for (int i = 0; i < n; ++i) flips += after[i] == targets[i];
  const double rate = double(flips) / n;
  const double change = mean_abs(edit.difference), full_change = mean_abs(full.difference);
  Outcome out;
  out.pass = rate >= 0.9 && change < 0.5 * full_change;
  out.detail = "t*=" + std::to_string(edit.start_timestep) + " flips=" + std::to_string(flips) + "/" +
               std::to_string(n) + " (" + fmt(rate, 3) + ") mean|edit|=" + fmt(change, 3) +
               " mean|full regen|=" + fmt(full_change, 3) + " ratio=" + fmt(change / full_change, 3);
  out.pass = within_budget(seconds_since(t0), 600.0, out.detail) && out.pass;
  return out;
}

// ---------------------------------------------------------------- C7

Outcome representation_granularity(Models& m) {
  const auto& ckpt = m.joint(kSeeds[0]);
  const auto t0 = Clock::now();
  const JointModel model = JointModel::from_checkpoint(ckpt);
  const auto sched = NoiseSchedule::from_params(model.spec().schedule);
  const Dataset& data = m.test();
  const int coarse = data.attribute_index("bright_background");
  const int fine = data.attribute_index("dot");
  auto column = [&](int a) {
    std::vector<int> y(static_cast<std::size_t>(data.size()));
    for (int i = 0; i < data.size(); ++i) y[static_cast<std::size_t>(i)] = data.attribute(i, a);
    return y;
  };
  const auto yc = column(coarse), yf = column(fine);
  const auto grid = probe_timesteps(sched.steps());
  std::vector<double> auc_c, auc_f;
  for (int t : grid) {
    const auto f = extract_features(model, data, t, sched, 99);
    auc_c.push_back(fit_logistic_probe(f, yc).auc);
    auc_f.push_back(fit_logistic_probe(f, yf).auc);
  }
  // grid points nearest 0.1 T and 0.9 T
  const std::size_t lo = 1, hi = grid.size() - 2;
  Outcome out;
  out.pass = auc_c[hi] >= 0.8 && auc_f[lo] - auc_f[hi] >= 0.1;
  out.detail = "t(0.1T)=" + std::to_string(grid[lo]) + " t(0.9T)=" + std::to_string(grid[hi]) +
               " coarse auc@0.9T=" + fmt(auc_c[hi], 3) + " fine auc@0.1T=" + fmt(auc_f[lo], 3) +
               " fine auc@0.9T=" + fmt(auc_f[hi], 3) + " |";
  for (std::size_t i = 0; i < grid.size(); ++i)
    out.detail += " t" + std::to_string(grid[i]) + ":" + fmt(auc_c[i], 2) + "/" + fmt(auc_f[i], 2);
  out.pass = within_budget(seconds_since(t0), 300.0, out.detail) && out.pass;
  return out;
}

// ---------------------------------------------------------------- C8

Outcome semi_supervised(Models& m) {
  std::vector<double> joint, standalone;
  std::string per_seed;
  for (auto s : kSeeds) {
    joint.push_back(accuracy_of(m.semi(s), m.test()));
    standalone.push_back(accuracy_of(m.standalone_semi(s), m.test()));
    per_seed += " s" + std::to_string(s) + "=" + fmt(joint.back(), 3) + "/" + fmt(standalone.back(), 3);
  }
  const double j = median3(joint), c = median3(standalone);
  Outcome out;
  out.pass = j - c >= 0.05;
  out.detail = "5% labels: median joint=" + fmt(j) + " standalone=" + fmt(c) + " gain=" + fmt(j - c, 3) +
               " (joint/standalone" + per_seed + ")";
  return out;
}

// ---------------------------------------------------------------- C9

Outcome domain_adaptation(Models& m) {
  const auto& src = m.joint_noisy(kSeeds[0]);
  const auto& adapted = m.adapted(kSeeds[0]);
  const double before = accuracy_of(src, m.target_test());
  const double after = accuracy_of(adapted, m.target_test());
  const double source_acc = accuracy_of(src, m.test());
  bool head_same = true;
  int head_tensors = 0;
  for (const auto& t : src.tensors) {
    if (t.group != "head") continue;
    ++head_tensors;
    const auto* r = adapted.find(t.name);
    head_same = head_same && r && *r == t;
  }
  Outcome out;
  out.pass = after - before >= 0.10 && head_same && head_tensors > 0;
  out.detail = "source-domain acc=" + fmt(source_acc, 3) + " target acc unadapted=" + fmt(before, 3) +
               " adapted=" + fmt(after, 3) + " gain=" + fmt(after - before, 3) + " head " +
               (head_same ? "bit-identical" : "CHANGED") + " (" + std::to_string(head_tensors) + " tensors)";
  return out;
}

// ---------------------------------------------------------------- C10

PrecisionRecall brute_precision_recall(const FeatureMatrix& real, const FeatureMatrix& gen, int k) {
  auto radii = [k](const FeatureMatrix& f) {
    std::vector<double> r;
    for (int i = 0; i < f.rows(); ++i) {
      std::vector<double> d;
      for (int j = 0; j < f.rows(); ++j)
        if (i != j) d.push_back((f.row(i) - f.row(j)).squaredNorm());
      std::sort(d.begin(), d.end());
      r.push_back(d[static_cast<std::size_t>(k - 1)]);
    }
    return r;
  };
  auto cover = [](const FeatureMatrix& ref, const std::vector<double>& r, const FeatureMatrix& q) {
    int in = 0;
    for (int i = 0; i < q.rows(); ++i) {
      bool hit = false;
      for (int j = 0; j < ref.rows() && !hit; ++j) hit = (q.row(i) - ref.row(j)).squaredNorm() <= r[static_cast<std::size_t>(j)];
      in += hit;
    }
    return double(in) / q.rows();
  };
  return {cover(real, radii(real), gen), cover(gen, radii(gen), real)};
}

FeatureMatrix cloud(int n, int d, double shift, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(shift, sd);
  FeatureMatrix f(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) f(i, j) = nd(rng);
  return f;
}

Outcome metric_sanity(Models& m) {
  const JointModel judge = JointModel::from_checkpoint(m.judge());
  const JointModel trained = JointModel::from_checkpoint(m.joint(kSeeds[0]));
  const JointModel random_model(desk_spec(), 4242);
  const auto sched = NoiseSchedule::from_params(trained.spec().schedule);
  const int n = 200;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const auto real = pooled_features(judge, m.test().batch(idx));
  const double self = feature_frechet(real, real);
  note("sampling " + std::to_string(n) + " images from the trained and the random model");
  const auto gen_trained = pooled_features(judge, sample_unconditional(trained, sched, n, 31));
  const auto gen_random = pooled_features(judge, sample_unconditional(random_model, sched, n, 31));
  const double fd_trained = feature_frechet(real, gen_trained);
  const double fd_random = feature_frechet(real, gen_random);

  bool pr_exact = true;
  int fixtures = 0;
  for (int rep = 0; rep < 4; ++rep)
    for (int k : {1, 3, 5}) {
      const auto a = cloud(60, 4, 0.0, 1.0, 10 + rep);
      const auto b = cloud(50, 4, 0.5 * rep, 0.6 + 0.3 * rep, 20 + rep);
      const auto got = precision_recall(a, b, k);
      const auto want = brute_precision_recall(a, b, k);
      pr_exact = pr_exact && got.precision == want.precision && got.recall == want.recall;
      ++fixtures;
    }
  const auto pr = precision_recall(real, gen_trained, 3);
  Outcome out;
  out.pass = std::abs(self) < 1e-3 && fd_random >= 2.0 * fd_trained && pr_exact;
  out.detail = "self=" + fmt(self, 3) + " trained=" + fmt(fd_trained, 4) + " random=" + fmt(fd_random, 4) +
               " ratio=" + fmt(fd_random / fd_trained, 3) + " P/R fixtures " + (pr_exact ? "exact" : "MISMATCH") +
               " (" + std::to_string(fixtures) + ") trained-sample precision=" + fmt(pr.precision, 3) +
               " recall=" + fmt(pr.recall, 3);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks (one line per criterion)"};
  std::vector<int> only;
  std::string cache;
  app.add_option("--only", only, "Run only these criteria (1-10)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--cache", cache, "Directory for trained checkpoints reused across runs");
  CLI11_PARSE(app, argc, argv);

  Models models(cache.empty() ? std::nullopt : std::optional<fs::path>(cache));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"reduction identities", reduction_identities},
      {"forward-chain consistency", forward_chain},
      {"joint vs standalone accuracy", [&] { return joint_vs_standalone(models); }},
      {"conditional-sampling adherence", [&] { return sampling_adherence(models); }},
      {"counterfactual flips", [&] { return counterfactual_flips(models); }},
      {"representation granularity", [&] { return representation_granularity(models); }},
      {"semi-supervised ordering", [&] { return semi_supervised(models); }},
      {"domain-adaptation ordering", [&] { return domain_adaptation(models); }},
      {"metric sanity", [&] { return metric_sanity(models); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  const auto start = Clock::now();
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    std::cerr << "C" << id << " " << criteria[i].first << std::endl;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    failures += !o.pass;
    std::cout << "C" << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cerr << "total " << fmt(seconds_since(start), 4) << " s (training " << fmt(models.training_seconds(), 4)
            << " s)" << std::endl;
  return failures == 0 ? 0 : 1;
}
