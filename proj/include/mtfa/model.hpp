#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtfa/features.hpp"
#include "mtfa/tape.hpp"
#include "mtfa/tensor.hpp"

namespace mtfa {

struct ModelConfig {
  int channels = 64;       // C, shared by both branches
  int gru_units = 64;      // U per direction
  int gru_layers = 2;
  int mel_bins = 128;      // D
  int chunk_frames = 256;  // T during training
  int chunk_shift = 128;
  int n_scales = 4;        // resolutions visited by the mask branch
  int kernel = 3;
  double dropout_rate = 0.3;
  double threshold = 0.4;
  bool use_mask_branch = true;  // false gives the feature-branch-only ablation
  std::string class_name = "custom";

  // time-axis padding requirement: 2^(n_scales - 1)
  std::int64_t pad_multiple() const { return std::int64_t(1) << (n_scales - 1); }
  void validate() const;
};

struct Conv2dLayer {
  Parameter weight, bias;
};

struct BatchNormLayer {
  Parameter gamma, beta;
  Tensor running_mean, running_var;
};

struct ResidualBlockLayer {
  Conv2dLayer conv1, conv2;
  BatchNormLayer bn1, bn2;
};

struct GruDirLayer {
  Parameter w_ih, w_hh, b_ih, b_hh;
};

struct BiGruLayer {
  GruDirLayer fwd, bwd;
};

struct LinearLayer {
  Parameter weight, bias;
};

// Branch outputs and per-scale mask maps for visualization and invariants.
struct AttentionTrace {
  Tensor feature;   // F, C x T x D
  Tensor mask;      // M, C x T x D, empty when the mask branch is disabled
  Tensor attended;  // A = (1 + M) * F
  // channel-mean mask map per scale; index k has shape T/2^k x D/2^k
  std::vector<Tensor> scale_masks;
};

// Stem + feature branch + Hourglass mask branch + residual attention +
// bi-GRU + frame classifier.
class MtfaModel {
 public:
  MtfaModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }

  // Stable construction order; excludes batchnorm running statistics.
  std::vector<Parameter*> parameters();
  // Every named tensor that belongs in a checkpoint (parameters + running stats).
  void for_each_state(const std::function<void(const std::string&, Tensor&)>& fn);

  std::int64_t parameter_count();

  // Whole-spectrogram inference: pads the time axis with the last frame to a
  // multiple of 2^(n_scales-1), runs eval-mode forward, crops back to the
  // original frame count.
  std::vector<real> predict(const Spectrogram& spec, AttentionTrace* trace = nullptr);

  // Eval-mode forward on an already-aligned T x D chunk.
  std::vector<real> forward_eval(const Tensor& chunk, AttentionTrace* trace = nullptr);

  // Training-mode forward on an aligned chunk; returns the T x 1 probability
  // tensor recorded on the tape.
  Var forward_train(Tape& tape, const Tensor& chunk, Rng& dropout_rng);

  // In-memory snapshot of every state tensor (for best-epoch tracking).
  std::vector<Tensor> snapshot_state();
  void restore_state(const std::vector<Tensor>& state);

  void save_checkpoint(const std::string& path);
  static MtfaModel load_checkpoint(const std::string& path);

 private:
  template <class Ctx>
  typename Ctx::V forward_impl(Ctx& cx, const Tensor& input, AttentionTrace* trace);
  template <class Ctx>
  typename Ctx::V residual_block(Ctx& cx, typename Ctx::V x, ResidualBlockLayer& blk);
  template <class Ctx>
  typename Ctx::V mask_branch(Ctx& cx, typename Ctx::V x, AttentionTrace* trace);

  ModelConfig cfg_;
  Conv2dLayer stem_conv_;
  BatchNormLayer stem_bn_;
  std::vector<ResidualBlockLayer> feature_blocks_;  // 2
  std::vector<ResidualBlockLayer> enc_blocks_, skip_blocks_, dec_blocks_;  // n_scales - 1 each
  ResidualBlockLayer bottleneck_;
  Conv2dLayer mask_out_;
  std::vector<BiGruLayer> gru_layers_;
  LinearLayer fc1_, fc2_;
};

}  // namespace mtfa
