#include "mtfa/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace mtfa::training {

std::vector<std::uint8_t> label_frames(std::int64_t t_total, double hop_seconds,
                                       const std::vector<EventAnnotation>& annotations) {
  MTFA_REQUIRE(t_total >= 0 && hop_seconds > 0, "label_frames: invalid arguments");
  for (const auto& a : annotations)
    MTFA_REQUIRE(a.offset > a.onset, "label_frames: annotation with onset " + std::to_string(a.onset) +
                                         " not before offset " + std::to_string(a.offset));
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(t_total), 0);
  for (std::int64_t t = 0; t < t_total; ++t) {
    const double center = static_cast<double>(t) * hop_seconds + hop_seconds;  // t*hop + window/2
    for (const auto& a : annotations) {
      if (center >= a.onset && center < a.offset) {
        labels[static_cast<std::size_t>(t)] = 1;
        break;
      }
    }
  }
  return labels;
}

std::vector<LabeledChunk> make_chunks(const Spectrogram& spec, const std::vector<std::uint8_t>& labels,
                                      const std::string& clip_id, int chunk_frames, int chunk_shift) {
  const std::int64_t t_total = spec.num_frames();
  const std::int64_t d = spec.num_mels();
  MTFA_REQUIRE(t_total >= 1, "make_chunks: empty spectrogram");
  MTFA_REQUIRE(static_cast<std::int64_t>(labels.size()) == t_total, "make_chunks: label count mismatch");
  MTFA_REQUIRE(chunk_frames > 0 && chunk_shift > 0, "make_chunks: invalid chunk geometry");

  std::vector<LabeledChunk> chunks;
  for (std::int64_t start = 0; start == 0 || start + chunk_frames - chunk_shift < t_total; start += chunk_shift) {
    LabeledChunk c;
    c.clip_id = clip_id;
    c.start_frame = start;
    c.features = Tensor({chunk_frames, d});
    c.labels = Tensor({chunk_frames, 1});
    for (std::int64_t i = 0; i < chunk_frames; ++i) {
      const std::int64_t src = std::min(start + i, t_total - 1);  // repeat last frame
      for (std::int64_t j = 0; j < d; ++j) c.features.at2(i, j) = spec.frames.at2(src, j);
      c.labels.at2(i, 0) = static_cast<real>(labels[static_cast<std::size_t>(src)]);
    }
    chunks.push_back(std::move(c));
  }
  return chunks;
}

void adam_step(std::span<Parameter* const> params, const TrainConfig& cfg) {
  const real lr = static_cast<real>(cfg.learning_rate);
  const real b1 = static_cast<real>(cfg.adam_beta1);
  const real b2 = static_cast<real>(cfg.adam_beta2);
  const real eps = static_cast<real>(cfg.adam_eps);
  for (Parameter* p : params) {
    p->step_count += 1;
    const auto t = static_cast<real>(p->step_count);
    const real corr1 = real(1) - std::pow(b1, t);
    const real corr2 = real(1) - std::pow(b2, t);
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const real g = p->grad[i];
      p->adam_m[i] = b1 * p->adam_m[i] + (real(1) - b1) * g;
      p->adam_v[i] = b2 * p->adam_v[i] + (real(1) - b2) * g * g;
      const real m_hat = p->adam_m[i] / corr1;
      const real v_hat = p->adam_v[i] / corr2;
      p->value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

TrainResult train(MtfaModel& model, const std::vector<LabeledClip>& dataset, const TrainConfig& cfg,
                  const std::string& class_name) {
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  MTFA_REQUIRE(cfg.patience >= 1, "train: patience must be at least 1");
  MTFA_REQUIRE(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0,
               "train: validation fraction must be in (0, 1)");
  const ModelConfig& mc = model.config();

  // clip-level split
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(cfg.seed, 101);
  split_rng.shuffle(order);
  auto n_val =
      static_cast<std::size_t>(std::max<std::int64_t>(1, std::lround(cfg.validation_fraction * dataset.size())));
  if (n_val >= dataset.size()) throw ConfigError("train: validation split leaves no training clips");

  TrainResult result;
  std::vector<LabeledChunk> train_chunks, val_chunks;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const LabeledClip& clip = dataset[order[i]];
    std::vector<EventAnnotation> class_events;
    for (const auto& e : clip.events)
      if (e.label == class_name) class_events.push_back(e);
    const auto labels = label_frames(clip.features.num_frames(), clip.features.hop_seconds, class_events);
    auto chunks = make_chunks(clip.features, labels, clip.id, mc.chunk_frames, mc.chunk_shift);
    const bool is_val = i < n_val;
    (is_val ? result.val_clips : result.train_clips).push_back(clip.id);
    auto& dst = is_val ? val_chunks : train_chunks;
    for (auto& c : chunks) dst.push_back(std::move(c));
  }
  if (train_chunks.empty() || val_chunks.empty()) throw ConfigError("train: empty train or validation split");

  std::vector<Parameter*> params = model.parameters();

  EarlyStopper stopper(cfg.patience);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> idx(train_chunks.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng epoch_rng(cfg.seed, 200 + static_cast<std::uint64_t>(epoch));
    epoch_rng.shuffle(idx);
    Rng dropout_rng(cfg.seed, 5000 + static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < idx.size()) {
      const std::size_t batch_end = std::min(idx.size(), pos + static_cast<std::size_t>(cfg.batch_size));
      const auto batch_n = static_cast<real>(batch_end - pos);
      for (Parameter* p : params) p->zero_grad();
      for (; pos < batch_end; ++pos) {
        const LabeledChunk& chunk = train_chunks[idx[pos]];
        Tape tape;
        Var probs = model.forward_train(tape, chunk.features, dropout_rng);
        Var loss = tape.bce(probs, chunk.labels);
        loss_sum += static_cast<double>(tape.val(loss)[0]);
        tape.backward(loss, real(1) / batch_n);  // batch loss = mean over chunks
      }
      adam_step(params, cfg);
    }
    const double train_loss = loss_sum / static_cast<double>(train_chunks.size());

    double val_sum = 0.0;
    for (const LabeledChunk& chunk : val_chunks) {
      const std::vector<real> probs = model.forward_eval(chunk.features);
      val_sum += static_cast<double>(ops::bce_loss(Tensor({static_cast<std::int64_t>(probs.size()), 1},
                                                          std::vector<real>(probs.begin(), probs.end())),
                                                   chunk.labels));
    }
    const double val_loss = val_sum / static_cast<double>(val_chunks.size());

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch, train_loss, val_loss, seconds});
    result.final_train_loss = train_loss;

    if (stopper.update(val_loss)) result.best_state = model.snapshot_state();
    if (cfg.stop_at_train_loss > 0.0 && train_loss < cfg.stop_at_train_loss) break;
    if (stopper.should_stop()) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  return result;
}

void write_train_log(const std::string& path, const std::vector<EpochStats>& log) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  for (const EpochStats& e : log) {
    nlohmann::ordered_json j{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                             {"seconds", e.seconds}};
    out << j.dump() << '\n';
  }
}

}  // namespace mtfa::training
