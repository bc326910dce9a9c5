#pragma once

// Training loop: sample -> augment -> forward -> loss -> backward -> clipped
// Adam step under the cosine schedule. Batch composition is a pure function
// of (seed, step), so a resumed run replays the original bit for bit.

#include <iosfwd>
#include <stdexcept>

#include "waveden/checkpoint.hpp"
#include "waveden/config.hpp"
#include "waveden/dataset.hpp"
#include "waveden/optim.hpp"

namespace waveden {

// Non-finite loss or similar numeric breakdowns; the CLI maps this to its
// own exit code.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  int64_t step = 0;
  double rate = 0.0;
  float loss = 0.0f;
  double val_psnr = 0.0;
  bool has_val = false;
};

// Serializes model config + parameters (+ optimizer state when given) into
// checkpoint entries, and back.
std::vector<CheckpointEntry> model_to_entries(Model<float>& model, Adam* opt);
Model<float> model_from_checkpoint(const std::vector<CheckpointEntry>& entries);

class Trainer {
 public:
  explicit Trainer(Settings settings, std::ostream* log = nullptr);

  // Restores parameters, optimizer state, and the step counter. The stored
  // model config must match the configured one.
  void resume(const std::string& checkpoint_path);

  void run();                 // trains to settings.steps, then writes the final checkpoint
  void run_steps(int64_t n);  // advances up to n steps without checkpointing

  double validate();  // mean PSNR over the validation pairs, tiled inference
  void save(const std::string& path);
  std::string final_checkpoint_path() const;

  Model<float>& model() { return model_; }
  int64_t step() const { return step_; }
  const Settings& settings() const { return settings_; }
  const std::vector<StepRecord>& history() const { return history_; }

  // Batch for a given step; pure in (seed, step).
  std::vector<ImagePair> make_batch(int64_t step) const;

  // Mean loss of the current model on a fixed batch, no graph.
  float eval_loss(const std::vector<ImagePair>& batch) const;

 private:
  void one_step();
  void log_record(const StepRecord& r);

  Settings settings_;
  Model<float> model_;
  Adam adam_;
  std::vector<ImagePair> train_, val_;
  int64_t step_ = 0;
  std::ostream* log_ = nullptr;
  std::vector<StepRecord> history_;
};

}  // namespace waveden
