#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mtfa/model.hpp"
#include "mtfa/postproc.hpp"

namespace mtfa::training {

struct TrainConfig {
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;   // chunks per optimizer step
  int patience = 10;     // epochs without validation improvement
  int max_epochs = 40;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  // optional overfit-experiment stop: end training once the epoch's training
  // loss drops below this value (0 disables)
  double stop_at_train_loss = 0.0;
};

// Frame t is positive iff its center time t*hop + window/2 (window = 2*hop)
// falls inside [onset, offset) of any annotation.
std::vector<std::uint8_t> label_frames(std::int64_t t_total, double hop_seconds,
                                       const std::vector<EventAnnotation>& annotations);

struct LabeledChunk {
  Tensor features;  // chunk_frames x D
  Tensor labels;    // chunk_frames x 1, values in {0, 1}
  std::string clip_id;
  std::int64_t start_frame = 0;
};

// Fixed-length chunks with the configured shift; tail chunks are padded by
// repeating the final frame (and final label).
std::vector<LabeledChunk> make_chunks(const Spectrogram& spec, const std::vector<std::uint8_t>& labels,
                                      const std::string& clip_id, int chunk_frames = 256, int chunk_shift = 128);

// One Adam update over the accumulated gradients; step counts live on the
// parameters themselves.
void adam_step(std::span<Parameter* const> params, const TrainConfig& cfg);

struct LabeledClip {
  std::string id;
  Spectrogram features;
  std::vector<EventAnnotation> events;  // all classes; train() filters
};

// Stop once the validation loss has not strictly improved for `patience`
// consecutive epochs.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  // Returns true when this epoch improved on the best loss so far.
  bool update(double val_loss) {
    ++epoch_;
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch_;
      since_improve_ = 0;
      return true;
    }
    ++since_improve_;
    return false;
  }
  bool should_stop() const { return since_improve_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_improve_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> log;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<Tensor> best_state;  // model snapshot at the best epoch
  double final_train_loss = 0.0;
  std::vector<std::string> train_clips, val_clips;
};

// Chunked BCE training with Adam and early stopping. The clip-level split is
// seeded; the model is left in its final-epoch state and the best-validation
// snapshot is returned for checkpointing.
TrainResult train(MtfaModel& model, const std::vector<LabeledClip>& dataset, const TrainConfig& cfg,
                  const std::string& class_name);

void write_train_log(const std::string& path, const std::vector<EpochStats>& log);

}  // namespace mtfa::training
