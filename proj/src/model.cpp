#include "jointdiff/model.hpp"

#include <algorithm>

#include "jointdiff/autodiff.hpp"

namespace jointdiff {

const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::head: return "head";
  }
  return "?";
}

JointModel::JointModel(const ModelSpec& spec, std::uint64_t seed)
    : spec_(spec), unet_(spec.unet, seed) {
  // Separate stream so the UNet initialization does not depend on the head shape.
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  head_ = ClassifierHead(nn::ParamRegistry(head_params_, "head", rng),
                         spec_.unet.pooled_length(), spec_.head);
  params_ = unet_.params();
  params_.insert(params_.end(), head_params_.begin(), head_params_.end());
}

JointModel JointModel::from_checkpoint(const Checkpoint& ckpt) {
  JointModel m(ModelSpec{ckpt.unet, ckpt.head, ckpt.schedule}, 0);
  m.load_parameters(ckpt);
  return m;
}

std::vector<int> JointModel::predict(const Tensor& images, int chunk) const {
  NoGradScope no_grad;
  const int n = images.dim(0);
  const std::size_t per = images.size() / static_cast<std::size_t>(n);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int start = 0; start < n; start += chunk) {
    const int len = std::min(chunk, n - start);
    Shape s = images.shape();
    s[0] = len;
    auto src = images.data().subspan(static_cast<std::size_t>(start) * per, len * per);
    Tensor batch(s, std::vector<float>(src.begin(), src.end()));
    auto preds = argmax_rows(classify(encode(batch, 0)));
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

std::vector<Tensor> JointModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

std::vector<Tensor> JointModel::parameters(ParamGroup g) const {
  std::vector<Tensor> out;
  for (const auto& p : params_)
    if (p.group == group_name(g)) out.push_back(p.tensor);
  return out;
}

std::vector<Tensor> JointModel::parameters(std::span<const ParamGroup> groups) const {
  std::vector<Tensor> out;
  for (const auto& p : params_)
    for (auto g : groups)
      if (p.group == group_name(g)) out.push_back(p.tensor);
  return out;
}

void JointModel::set_trainable(ParamGroup g, bool trainable) {
  for (auto& p : params_)
    if (p.group == group_name(g)) p.tensor.set_requires_grad(trainable);
}

void JointModel::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

Checkpoint JointModel::to_checkpoint(TrainingMeta meta) const {
  Checkpoint c;
  c.unet = spec_.unet;
  c.head = spec_.head;
  c.schedule = spec_.schedule;
  c.meta = std::move(meta);
  c.tensors.reserve(params_.size());
  for (const auto& p : params_) {
    auto v = p.tensor.data();
    c.tensors.push_back(TensorRecord{p.group, p.name, p.tensor.shape(), {v.begin(), v.end()}});
  }
  return c;
}

void JointModel::load_parameters(const Checkpoint& ckpt) {
  for (auto& p : params_) {
    const TensorRecord* rec = ckpt.find(p.name);
    if (!rec) throw CheckpointError("checkpoint: missing tensor '" + p.name + "'");
    if (rec->shape != p.tensor.shape())
      throw CheckpointError("checkpoint: tensor '" + p.name + "' has shape " +
                            shape_str(rec->shape) + " but the model expects " +
                            shape_str(p.tensor.shape()));
    if (rec->group != p.group)
      throw CheckpointError("checkpoint: tensor '" + p.name + "' stored in group '" + rec->group +
                            "', expected '" + p.group + "'");
  }
  if (ckpt.tensors.size() != params_.size())
    throw CheckpointError("checkpoint: holds " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model has " + std::to_string(params_.size()));
  for (auto& p : params_) {
    const TensorRecord* rec = ckpt.find(p.name);
    std::copy(rec->values.begin(), rec->values.end(), p.tensor.data().begin());
  }
}

}  // namespace jointdiff
