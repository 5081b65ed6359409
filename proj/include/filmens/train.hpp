#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "filmens/data.hpp"
#include "filmens/film.hpp"
#include "filmens/model.hpp"
#include "filmens/optim.hpp"

namespace filmens {

struct TrainConfig {
  OptimizerConfig opt;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;  // 0 disables in-training eval
  std::size_t pad_crop = 0;    // image augmentation: reflect-pad pixels
  bool hflip = false;          // image augmentation: horizontal flip p=0.5
};

/// Per-member and ensemble-averaged class probabilities for s test samples.
template <typename S>
struct PredictionSet {
  std::size_t members = 0, samples = 0, classes = 0;
  std::vector<S> member_probs;    // [m][s][k]
  std::vector<S> ensemble_probs;  // [s][k]
  std::vector<int> targets;

  S member_prob(std::size_t m, std::size_t s, std::size_t k) const {
    return member_probs[(m * samples + s) * classes + k];
  }
  S ensemble_prob(std::size_t s, std::size_t k) const {
    return ensemble_probs[s * classes + k];
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> eval_accuracy;
  std::optional<double> eval_ece;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
};

/// Mean over members of the per-member cross-entropy.
template <typename S>
Tensor<S> compute_loss(const std::vector<Tensor<S>>& member_logits,
                       const std::vector<int>& targets, Tape<S>* tape = nullptr) {
  if (member_logits.empty()) throw ValueError("compute_loss: no members");
  Tensor<S> acc = cross_entropy(member_logits[0], targets, tape);
  for (std::size_t m = 1; m < member_logits.size(); ++m)
    acc = add(acc, cross_entropy(member_logits[m], targets, tape), tape);
  return scale(acc, S(1) / static_cast<S>(member_logits.size()), tape);
}

namespace detail {
/// Copies the selected dataset rows into a batch tensor, optionally pushing
/// each image sample through the augmentation pipeline first.
template <typename S>
Tensor<S> gather_batch(const Dataset<S>& ds, const std::vector<std::size_t>& order,
                       std::size_t begin, std::size_t end, std::size_t pad_crop, bool hflip,
                       RngStream* aug_rng) {
  const std::size_t sample = ds.inputs.size() / ds.size();
  Shape shape = ds.inputs.shape();
  shape[0] = end - begin;
  Tensor<S> batch(shape);
  const bool augment = aug_rng != nullptr && (pad_crop > 0 || hflip) && ds.inputs.ndim() == 4;
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t src = order[i];
    const S* from = ds.inputs.data() + src * sample;
    S* to = batch.data() + (i - begin) * sample;
    if (augment) {
      Tensor<S> img = Tensor<S>::from_data(
          {ds.inputs.extent(1), ds.inputs.extent(2), ds.inputs.extent(3)},
          std::vector<S>(from, from + sample));
      Tensor<S> aug = augment_image(img, pad_crop, hflip ? 0.5 : 0.0, *aug_rng);
      std::copy(aug.data(), aug.data() + sample, to);
    } else {
      std::copy(from, from + sample, to);
    }
  }
  return batch;
}

template <typename S>
std::vector<int> gather_targets(const Dataset<S>& ds, const std::vector<std::size_t>& order,
                                std::size_t begin, std::size_t end) {
  std::vector<int> t;
  t.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) t.push_back(ds.targets[order[i]]);
  return t;
}
}  // namespace detail

template <typename S>
PredictionSet<S> evaluate(Model<S>& model, const Dataset<S>& data,
                          std::size_t eval_batch = 256);

/// SGD training loop: seeded shuffle, per-sample augmentation before
/// replication (all members see the same view), member-mean cross-entropy,
/// cosine-annealed learning rate.  Everything is a deterministic function of
/// (seed, config, data).
template <typename S>
TrainHistory train(Model<S>& model, const Dataset<S>& data, const TrainConfig& config,
                   const Dataset<S>* eval_data = nullptr) {
  data.validate();
  config.opt.validate();
  const std::size_t epochs = config.opt.epochs;
  TrainHistory history;
  if (epochs == 0) return history;

  auto params = model.parameters();
  auto state = OptimizerState<S>::init(params);
  RngStream shuffle_rng(config.seed, streams::kShuffle);
  RngStream dropout_rng(config.seed, streams::kDropout);
  RngStream augment_rng(config.seed, streams::kAugment);

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t bs = config.opt.batch_size;
  Tape<S> tape;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double lr = cosine_lr(epoch, epochs, config.opt.lr0);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += bs) {
      const std::size_t end = std::min(begin + bs, data.size());
      if ((end - begin) * model.ensemble_size() < 2) {
        std::cerr << "warning: skipping size-" << (end - begin)
                  << " batch (normalization needs at least 2 replicated rows)\n";
        continue;
      }
      Tensor<S> batch = detail::gather_batch(data, order, begin, end, config.pad_crop,
                                             config.hflip, &augment_rng);
      std::vector<int> targets = detail::gather_targets(data, order, begin, end);
      for (auto& p : params) p.zero_grad();
      tape.reset();
      auto member_logits = model.member_forward(batch, Mode::train, &tape, &dropout_rng);
      Tensor<S> loss = compute_loss(member_logits, targets, &tape);
      const double loss_v = static_cast<double>(loss.item());
      if (!std::isfinite(loss_v))
        throw ValueError("train: non-finite loss at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(n_batches) + ", lr " + std::to_string(lr));
      tape.backward(loss);
      sgd_step(params, state, lr, config.opt);
      loss_sum += loss_v;
      ++n_batches;
    }
    state.epoch = epoch + 1;
#ifndef NDEBUG
    for (auto& p : params)
      if (!p.all_finite())
        throw ValueError("train: non-finite parameter after epoch " + std::to_string(epoch));
#endif
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0;
    if (eval_data != nullptr && config.eval_every > 0 && (epoch + 1) % config.eval_every == 0) {
      auto preds = evaluate(model, *eval_data);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < preds.samples; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < preds.classes; ++k)
          if (preds.ensemble_prob(i, k) > preds.ensemble_prob(i, best)) best = k;
        if (static_cast<int>(best) == preds.targets[i]) ++correct;
      }
      rec.eval_accuracy = static_cast<double>(correct) / static_cast<double>(preds.samples);
    }
    history.records.push_back(rec);
  }
  return history;
}

/// Batched eval-mode inference: per-member softmax probabilities plus their
/// ensemble average.
template <typename S>
PredictionSet<S> evaluate(Model<S>& model, const Dataset<S>& data, std::size_t eval_batch) {
  data.validate();
  const std::size_t m = model.ensemble_size();
  const std::size_t s = data.size();
  const auto k = static_cast<std::size_t>(model.config.num_classes);
  PredictionSet<S> out;
  out.members = m;
  out.samples = s;
  out.classes = k;
  out.member_probs.assign(m * s * k, S(0));
  out.ensemble_probs.assign(s * k, S(0));
  out.targets = data.targets;

  std::vector<std::size_t> order(s);
  for (std::size_t i = 0; i < s; ++i) order[i] = i;
  for (std::size_t begin = 0; begin < s; begin += eval_batch) {
    const std::size_t end = std::min(begin + eval_batch, s);
    Tensor<S> batch = detail::gather_batch(data, order, begin, end, 0, false, nullptr);
    auto member_logits = model.member_forward(batch, Mode::eval);
    for (std::size_t mi = 0; mi < m; ++mi) {
      Tensor<S> probs = softmax(member_logits[mi]);
      for (std::size_t i = begin; i < end; ++i)
        for (std::size_t c = 0; c < k; ++c)
          out.member_probs[(mi * s + i) * k + c] = probs.at(i - begin, c);
    }
  }
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      S acc = S(0);
      for (std::size_t mi = 0; mi < m; ++mi) acc += out.member_probs[(mi * s + i) * k + c];
      out.ensemble_probs[i * k + c] = acc / static_cast<S>(m);
    }
  return out;
}

/// Eq.-style probability averaging across independently trained models; the
/// deep-ensemble baseline's inference path.
template <typename S>
PredictionSet<S> evaluate_deep_ensemble(std::vector<Model<S>>& models, const Dataset<S>& data,
                                        std::size_t eval_batch = 256) {
  if (models.empty()) throw ValueError("evaluate_deep_ensemble: no models");
  const std::size_t m = models.size();
  const std::size_t s = data.size();
  const auto k = static_cast<std::size_t>(models.front().config.num_classes);
  PredictionSet<S> out;
  out.members = m;
  out.samples = s;
  out.classes = k;
  out.member_probs.assign(m * s * k, S(0));
  out.ensemble_probs.assign(s * k, S(0));
  out.targets = data.targets;
  for (std::size_t mi = 0; mi < m; ++mi) {
    auto single = evaluate(models[mi], data, eval_batch);
    std::copy(single.ensemble_probs.begin(), single.ensemble_probs.end(),
              out.member_probs.begin() + mi * s * k);
  }
  for (std::size_t i = 0; i < s * k; ++i) {
    S acc = S(0);
    for (std::size_t mi = 0; mi < m; ++mi) acc += out.member_probs[mi * s * k + i];
    out.ensemble_probs[i] = acc / static_cast<S>(m);
  }
  return out;
}

}  // namespace filmens
