#include "waveden/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>

#include "waveden/metrics.hpp"
#include "waveden/tiling.hpp"

namespace waveden {

namespace {

std::vector<std::pair<std::string, Tensor<float>>> named_params(Model<float>& model) {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  model.visit_params([&](const std::string& name, Tensor<float>& t) { out.emplace_back(name, t); });
  return out;
}

}  // namespace

std::vector<CheckpointEntry> model_to_entries(Model<float>& model, Adam* opt) {
  std::vector<CheckpointEntry> entries;
  for (const auto& [key, value] : model_config_entries(model.config()))
    entries.push_back({"config/" + key, {}, {float(value)}});
  model.visit_params([&](const std::string& name, Tensor<float>& t) {
    entries.push_back({"param/" + name, t.shape(),
                       std::vector<float>(t.data().begin(), t.data().end())});
  });
  if (opt) {
    entries.push_back({"opt/step", {}, {float(opt->step_count())}});
    for (size_t i = 0; i < opt->size(); ++i) {
      entries.push_back({"opt/m/" + opt->name(i), opt->param(i).shape(), opt->moment1(i)});
      entries.push_back({"opt/v/" + opt->name(i), opt->param(i).shape(), opt->moment2(i)});
    }
  }
  return entries;
}

Model<float> model_from_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, double> cfg_kv;
  std::map<std::string, const CheckpointEntry*> params;
  for (const auto& e : entries) {
    if (e.name.rfind("config/", 0) == 0) cfg_kv[e.name.substr(7)] = double(e.data.at(0));
    else if (e.name.rfind("param/", 0) == 0) params[e.name.substr(6)] = &e;
  }
  Model<float> model(model_config_from_entries(cfg_kv), Rng(0));
  size_t used = 0;
  model.visit_params([&](const std::string& name, Tensor<float>& t) {
    auto it = params.find(name);
    if (it == params.end()) throw CheckpointError("checkpoint: missing parameter '" + name + "'");
    const CheckpointEntry& e = *it->second;
    if (e.shape != t.shape())
      throw CheckpointError("checkpoint: parameter '" + name + "' has shape " +
                            detail::shape_str(e.shape) + ", expected " +
                            detail::shape_str(t.shape()));
    std::copy(e.data.begin(), e.data.end(), t.mutable_data().begin());
    ++used;
  });
  if (used != params.size()) throw CheckpointError("checkpoint: unexpected extra parameters");
  return model;
}

Trainer::Trainer(Settings settings, std::ostream* log)
    : settings_(settings),
      model_(settings.model, Rng(settings.seed).split("init")),
      adam_(named_params(model_)),
      log_(log) {
  detail::check(settings_.steps >= 0, "trainer: steps must be non-negative");
  detail::check(settings_.batch >= 1, "trainer: batch_size must be positive");
  if (!settings_.data_root.empty()) {
    train_ = load_paired_folder(settings_.data_root);
    detail::check(!train_.empty(), "trainer: no training pairs under " + settings_.data_root);
    for (const auto& p : train_)
      detail::check(p.clean.height >= settings_.model.train_patch &&
                        p.clean.width >= settings_.model.train_patch,
                    "trainer: training image smaller than train_patch");
  }
  if (!settings_.val_root.empty()) val_ = load_paired_folder(settings_.val_root);
}

void Trainer::resume(const std::string& checkpoint_path) {
  const auto entries = load_checkpoint(checkpoint_path);
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;

  std::map<std::string, double> cfg_kv;
  for (const auto& e : entries)
    if (e.name.rfind("config/", 0) == 0) cfg_kv[e.name.substr(7)] = double(e.data.at(0));
  const auto want = model_config_entries(settings_.model);
  for (const auto& [key, value] : want) {
    auto it = cfg_kv.find(key);
    detail::check(it != cfg_kv.end() && it->second == value,
                  "resume: checkpoint config '" + key + "' does not match the run config");
  }

  model_.visit_params([&](const std::string& name, Tensor<float>& t) {
    auto it = by_name.find("param/" + name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: missing parameter '" + name + "'");
    detail::check(it->second->shape == t.shape(), "resume: shape mismatch for " + name);
    std::copy(it->second->data.begin(), it->second->data.end(), t.mutable_data().begin());
  });

  auto step_it = by_name.find("opt/step");
  if (step_it == by_name.end()) throw CheckpointError("checkpoint: missing optimizer state");
  const int64_t t = int64_t(step_it->second->data.at(0));
  adam_.set_step_count(t);
  step_ = t;
  for (size_t i = 0; i < adam_.size(); ++i) {
    auto m_it = by_name.find("opt/m/" + adam_.name(i));
    auto v_it = by_name.find("opt/v/" + adam_.name(i));
    if (m_it == by_name.end() || v_it == by_name.end())
      throw CheckpointError("checkpoint: missing moments for " + adam_.name(i));
    adam_.moment1(i) = m_it->second->data;
    adam_.moment2(i) = v_it->second->data;
  }
}

std::vector<ImagePair> Trainer::make_batch(int64_t step) const {
  detail::check(!train_.empty(), "trainer: no training data loaded");
  Rng rng = Rng(settings_.seed).split("batch").split(uint64_t(step));
  std::vector<ImagePair> batch;
  batch.reserve(size_t(settings_.batch));
  const int64_t patch = settings_.model.train_patch;
  for (int64_t b = 0; b < settings_.batch; ++b) {
    const auto& src = train_[size_t(rng.uniform_int(int64_t(train_.size())))];
    const int64_t top = rng.uniform_int(src.clean.height - patch + 1);
    const int64_t left = rng.uniform_int(src.clean.width - patch + 1);
    batch.push_back(augment_pair(crop_pair(src, patch, top, left), rng));
  }
  return batch;
}

float Trainer::eval_loss(const std::vector<ImagePair>& batch) const {
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& pair : batch) {
    Tensor<float> loss = compute_loss(settings_.loss, model_.forward(to_tensor(pair.noisy)),
                                      to_tensor(pair.clean), settings_.charbonnier_eps);
    total += double(loss.item());
  }
  return float(total / double(batch.size()));
}

void Trainer::one_step() {
  const auto batch = make_batch(step_);
  adam_.zero_grad();

  Tensor<float> total;
  for (const auto& pair : batch) {
    Tensor<float> pred = model_.forward(to_tensor(pair.noisy));
    Tensor<float> loss =
        compute_loss(settings_.loss, pred, to_tensor(pair.clean), settings_.charbonnier_eps);
    total = total.defined() ? add(total, loss) : loss;
  }
  Tensor<float> loss = scale(total, 1.0f / float(settings_.batch));
  const float loss_value = loss.item();
  if (!std::isfinite(loss_value))
    throw NumericError("training diverged: non-finite loss at step " + std::to_string(step_));

  loss.backward();
  adam_.clip_grad_norm(double(settings_.clip_norm));
  const double rate = cosine_rate(step_, {settings_.lr_init, settings_.lr_floor, settings_.steps});
  adam_.step(rate);
  ++step_;

  StepRecord rec;
  rec.step = step_ - 1;
  rec.rate = rate;
  rec.loss = loss_value;
  if (settings_.val_interval > 0 && !val_.empty() &&
      (step_ % settings_.val_interval == 0 || step_ == settings_.steps)) {
    rec.val_psnr = validate();
    rec.has_val = true;
  }
  history_.push_back(rec);
  log_record(rec);

  if (settings_.checkpoint_interval > 0 && step_ % settings_.checkpoint_interval == 0 &&
      step_ < settings_.steps)
    save(final_checkpoint_path());
}

void Trainer::log_record(const StepRecord& r) {
  if (!log_) return;
  char buf[128];
  if (r.has_val)
    std::snprintf(buf, sizeof buf, "%lld\t%.8e\t%.8e\t%.4f", (long long)r.step, r.rate,
                  double(r.loss), r.val_psnr);
  else
    std::snprintf(buf, sizeof buf, "%lld\t%.8e\t%.8e", (long long)r.step, r.rate, double(r.loss));
  (*log_) << buf << '\n';
  log_->flush();
}

void Trainer::run_steps(int64_t n) {
  for (int64_t i = 0; i < n && step_ < settings_.steps; ++i) one_step();
}

void Trainer::run() {
  while (step_ < settings_.steps) one_step();
  save(final_checkpoint_path());
}

double Trainer::validate() {
  detail::check(!val_.empty(), "trainer: no validation data loaded");
  const int64_t overlap = std::min(settings_.tile_overlap, settings_.model.train_patch / 2);
  double total = 0.0;
  for (const auto& pair : val_) {
    const Image out = clamp_image(denoise_tiled(model_, pair.noisy, overlap));
    total += psnr(out, pair.clean);
  }
  return total / double(val_.size());
}

void Trainer::save(const std::string& path) {
  save_checkpoint(path, model_to_entries(model_, &adam_));
}

std::string Trainer::final_checkpoint_path() const {
  return (std::filesystem::path(settings_.out_dir) / "model.ckpt").string();
}

}  // namespace waveden
