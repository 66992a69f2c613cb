// Copyright 2026 The retinavl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "retinavl/adaptation/segmentation.hpp"

#include "retinavl/core/error.hpp"
#include "retinavl/core/types.hpp"
#include "retinavl/pretraining/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace retinavl::adaptation {

namespace {

std::vector<int> deep_first(const std::vector<int>& taps) {
  std::vector<int> t = taps;
  std::sort(t.rbegin(), t.rend());
  return t;
}

std::string idx(const char* stem, std::size_t k, const char* leaf) {
  return std::string(stem) + "." + std::to_string(k) + "." + leaf;
}

}  // namespace

void SegHeadConfig::validate() const {
  RVL_CHECK(!tap_layers.empty(), ConfigError, "segmentation head needs at least one tap layer");
  RVL_CHECK(decoder_channels.size() == tap_layers.size(), ConfigError, "one decoder width per tap layer required");
  for (int c : decoder_channels) RVL_CHECK(c >= 1, ConfigError, "decoder widths must be positive");
  RVL_CHECK(image_channels >= 0, ConfigError, "image_channels must be non-negative");
  RVL_CHECK(patch_side > 0 && input_side > 0 && input_side % patch_side == 0, ConfigError,
            "input_side must be a positive multiple of patch_side");
  RVL_CHECK(level_side(tap_layers.size() - 1) <= input_side, ConfigError,
            "too many decoder levels for the input side");
  RVL_CHECK(num_classes >= 1, ConfigError, "num_classes must be at least 1");
  RVL_CHECK(dice_weight >= 0 && focal_weight >= 0 && dice_weight + focal_weight > 0, ConfigError,
            "loss weights must be non-negative and not both zero");
  RVL_CHECK(focal_gamma >= 0 && focal_alpha > 0 && focal_alpha < 1, ConfigError, "invalid focal parameters");
}

void SegHeadConfig::validate(const encoders::VisionEncoderConfig& encoder) const {
  validate();
  RVL_CHECK(patch_side == encoder.patch_side, ConfigError, "head and encoder patch sides differ");
  for (int t : tap_layers)
    RVL_CHECK(t >= 1 && t <= encoder.depth, ConfigError, "tap layer " + std::to_string(t) + " outside the encoder");
}

SegHeadConfig SegHeadConfig::reference() { return {}; }

SegHeadConfig SegHeadConfig::tiny() {
  SegHeadConfig c;
  c.tap_layers = {1, 2};
  c.decoder_channels = {8, 8};
  c.image_channels = 8;
  c.input_side = 64;
  c.patch_side = 8;
  return c;
}

ad::SparseMatrix resize_operator(int from_side, int to_side) {
  RVL_CHECK(from_side > 0 && to_side > 0, ShapeError, "resize_operator: sides must be positive");
  struct Tap {
    int i0, i1;
    double f;
  };
  std::vector<Tap> taps(static_cast<std::size_t>(to_side));
  const double scale = static_cast<double>(from_side) / to_side;
  for (int o = 0; o < to_side; ++o) {
    const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(from_side - 1));
    const int i0 = static_cast<int>(std::floor(src));
    taps[static_cast<std::size_t>(o)] = {i0, std::min(i0 + 1, from_side - 1), src - i0};
  }
  std::vector<Eigen::Triplet<double>> t;
  for (int oy = 0; oy < to_side; ++oy)
    for (int ox = 0; ox < to_side; ++ox) {
      const Tap& y = taps[static_cast<std::size_t>(oy)];
      const Tap& x = taps[static_cast<std::size_t>(ox)];
      const int row = oy * to_side + ox;
      const int ys[2] = {y.i0, y.i1}, xs[2] = {x.i0, x.i1};
      const double wy[2] = {1 - y.f, y.f}, wx[2] = {1 - x.f, x.f};
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          if (wy[a] * wx[b] != 0) t.emplace_back(row, ys[a] * from_side + xs[b], wy[a] * wx[b]);
    }
  ad::SparseMatrix s(static_cast<Eigen::Index>(to_side) * to_side, static_cast<Eigen::Index>(from_side) * from_side);
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

ad::SparseMatrix shift_operator(int side, int dy, int dx) {
  std::vector<Eigen::Triplet<double>> t;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const int sy = y + dy, sx = x + dx;
      if (sy >= 0 && sx >= 0 && sy < side && sx < side) t.emplace_back(y * side + x, sy * side + sx, 1.0);
    }
  const Eigen::Index p = static_cast<Eigen::Index>(side) * side;
  ad::SparseMatrix s(p, p);
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

namespace {

std::vector<ad::SparseMatrix> conv_taps(int side) {
  std::vector<ad::SparseMatrix> out;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) out.push_back(shift_operator(side, dy, dx));
  return out;
}

// 3x3 same-padding convolution of a (pixels x c_in) map with a (9 c_in x c_out)
// kernel, as the sum over taps of shift(x * kernel block); this keeps memory at
// pixels x c_out per tap.
ad::Var conv3x3(const std::vector<ad::SparseMatrix>& taps, ad::Var x, ad::Var w, ad::Var b) {
  const Eigen::Index c_in = x.cols();
  ad::Var acc;
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const ad::Var term =
        ad::sparse_matmul(taps[k], ad::matmul(x, ad::slice_rows(w, static_cast<Eigen::Index>(k) * c_in, c_in)));
    acc = k == 0 ? term : ad::add(acc, term);
  }
  return ad::add_row(acc, b);
}

}  // namespace

SegmentationHead::SegmentationHead(SegHeadConfig config, ParameterSet params, int encoder_width, int image_channels_in)
    : config_(std::move(config)), params_(std::move(params)), encoder_width_(encoder_width),
      image_channels_in_(image_channels_in) {
  config_.validate();
  const std::size_t levels = config_.tap_layers.size();
  const auto& ch = config_.decoder_channels;
  auto expect = [this](const std::string& name, Eigen::Index r, Eigen::Index c) {
    RVL_CHECK(params_.contains(name), ConfigError, "segmentation head is missing " + name);
    RVL_CHECK(params_[name].rows() == r && params_[name].cols() == c, ShapeError, "segmentation head: bad shape for " + name);
  };
  for (std::size_t k = 0; k < levels; ++k) {
    expect(idx("proj", k, "w"), encoder_width_, ch[k]);
    expect(idx("proj", k, "b"), 1, ch[k]);
    if (k > 0) {
      expect(idx("dec", k, "w"), 9 * (ch[k - 1] + ch[k]), ch[k]);
      expect(idx("dec", k, "b"), 1, ch[k]);
    }
  }
  if (config_.image_channels > 0) {
    expect("img.w", 9 * image_channels_in_, config_.image_channels);
    expect("img.b", 1, config_.image_channels);
  }
  expect("out.w", 9 * (ch.back() + config_.image_channels), config_.num_classes);
  expect("out.b", 1, config_.num_classes);

  for (std::size_t k = 0; k < levels; ++k) {
    const int side = config_.level_side(k);
    ops_.level_shifts.push_back(conv_taps(side));
    ops_.level_up.push_back(k == 0 ? ad::SparseMatrix() : resize_operator(config_.level_side(k - 1), side));
    ops_.skip_up.push_back(k == 0 ? ad::SparseMatrix() : resize_operator(config_.grid(), side));
  }
  ops_.out_up = resize_operator(config_.level_side(levels - 1), config_.input_side);
  ops_.out_shifts = conv_taps(config_.input_side);
}

SegmentationHead SegmentationHead::init(const SegHeadConfig& config, int encoder_width, std::uint64_t seed,
                                        int image_channels_in) {
  config.validate();
  std::mt19937_64 rng(seed);
  ParameterSet p;
  auto he = [&rng](Eigen::Index fan_in, Eigen::Index fan_out) {
    return random_normal(fan_in, fan_out, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
  };
  const auto& ch = config.decoder_channels;
  for (std::size_t k = 0; k < ch.size(); ++k) {
    p.add(idx("proj", k, "w"), he(encoder_width, ch[k]));
    p.add(idx("proj", k, "b"), Matrix::Zero(1, ch[k]));
    if (k > 0) {
      p.add(idx("dec", k, "w"), he(9 * (ch[k - 1] + ch[k]), ch[k]));
      p.add(idx("dec", k, "b"), Matrix::Zero(1, ch[k]));
    }
  }
  if (config.image_channels > 0) {
    p.add("img.w", he(9 * image_channels_in, config.image_channels));
    p.add("img.b", Matrix::Zero(1, config.image_channels));
  }
  p.add("out.w", he(9 * (ch.back() + config.image_channels), config.num_classes) * 0.1);
  // Foreground prior of 0.1 keeps the focal term stable at the start.
  p.add("out.b", Matrix::Constant(1, config.num_classes, std::log(0.1 / 0.9)));
  return SegmentationHead(config, std::move(p), encoder_width, image_channels_in);
}

Matrix pixel_matrix(const Image& image) {
  Matrix m(static_cast<Eigen::Index>(image.height()) * image.width(), image.channels());
  for (int c = 0; c < image.channels(); ++c)
    for (int y = 0; y < image.height(); ++y)
      for (int x = 0; x < image.width(); ++x) m(static_cast<Eigen::Index>(y) * image.width() + x, c) = image[c](y, x);
  return m;
}

ad::Var SegmentationHead::forward(ad::Tape& tape, const std::map<std::string, ad::Var>& head,
                                  const std::map<int, Matrix>& layer_features, const Image& image) const {
  const auto taps = deep_first(config_.tap_layers);
  const Eigen::Index tokens = static_cast<Eigen::Index>(config_.grid()) * config_.grid();
  std::vector<ad::Var> proj;
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const auto it = layer_features.find(taps[k]);
    RVL_CHECK(it != layer_features.end(), ConfigError, "missing features for tap layer " + std::to_string(taps[k]));
    RVL_CHECK(it->second.rows() == tokens && it->second.cols() == encoder_width_, ShapeError,
              "tap layer " + std::to_string(taps[k]) + " features have the wrong shape");
    proj.push_back(ad::relu(
        ad::add_row(ad::matmul(tape.constant(it->second), head.at(idx("proj", k, "w"))), head.at(idx("proj", k, "b")))));
  }
  ad::Var x = proj[0];
  for (std::size_t k = 1; k < taps.size(); ++k) {
    const ad::Var up = ad::sparse_matmul(ops_.level_up[k], x);
    const ad::Var skip = ad::sparse_matmul(ops_.skip_up[k], proj[k]);
    x = ad::relu(conv3x3(ops_.level_shifts[k], ad::concat_cols({up, skip}), head.at(idx("dec", k, "w")),
                         head.at(idx("dec", k, "b"))));
  }
  ad::Var y = ad::sparse_matmul(ops_.out_up, x);
  if (config_.image_channels > 0) {
    RVL_CHECK(image.height() == config_.input_side && image.width() == config_.input_side &&
                  image.channels() == image_channels_in_,
              ShapeError, "segmentation input must be " + std::to_string(config_.input_side) + " px with " +
                              std::to_string(image_channels_in_) + " channels");
    const ad::Var img = ad::relu(conv3x3(ops_.out_shifts, tape.constant(pixel_matrix(image)), head.at("img.w"), head.at("img.b")));
    y = ad::concat_cols({y, img});
  }
  return conv3x3(ops_.out_shifts, y, head.at("out.w"), head.at("out.b"));
}

std::vector<Matrix> logit_maps(const Matrix& logits, int side) {
  RVL_CHECK(logits.rows() == static_cast<Eigen::Index>(side) * side, ShapeError, "logit_maps: pixel count mismatch");
  std::vector<Matrix> out;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    Matrix m(side, side);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) m(y, x) = logits(static_cast<Eigen::Index>(y) * side + x, c);
    out.push_back(std::move(m));
  }
  return out;
}

Matrix segmentation_forward(const SegmentationHead& head, const std::map<int, Matrix>& layer_features,
                            const Image& image) {
  ad::Tape tape;
  const auto h = tape.bind(head.params(), "", true);
  return head.forward(tape, h, layer_features, image).value();
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SegLoss seg_loss(const Matrix& logits, const Matrix& targets, const SegHeadConfig& w) {
  RVL_CHECK(logits.rows() == targets.rows() && logits.cols() == targets.cols(), ShapeError,
            "seg_loss: logits and targets differ in shape");
  RVL_CHECK(logits.size() > 0, ShapeError, "seg_loss: empty input");
  constexpr double kSmooth = 1e-6;
  const double k = static_cast<double>(logits.cols());
  const double n = static_cast<double>(logits.size());
  const double a = w.focal_alpha, g = w.focal_gamma;
  SegLoss out;
  out.d_logits = Matrix::Zero(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    double inter = 0, sum = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double p = sigmoid(logits(i, c));
      inter += p * targets(i, c);
      sum += p + targets(i, c);
    }
    const double ratio = (2 * inter + kSmooth) / (sum + kSmooth);
    out.dice += (1 - ratio) / k;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double z = logits(i, c), t = targets(i, c);
      const double p = sigmoid(z);
      const double d_dice_dp = -(2 * t * (sum + kSmooth) - (2 * inter + kSmooth)) / ((sum + kSmooth) * (sum + kSmooth));
      // Positive part: pt = sigmoid(z); negative part: qt = sigmoid(-z).
      const double pt = p, log_pt = -softplus(-z);
      const double qt = 1 - p, log_qt = -softplus(z);
      const double fl1 = -a * std::pow(1 - pt, g) * log_pt;
      const double fl0 = -(1 - a) * std::pow(1 - qt, g) * log_qt;
      const double d1 = a * (g * std::pow(1 - pt, g) * pt * log_pt - std::pow(1 - pt, g + 1));
      const double d0 = -(1 - a) * (g * std::pow(1 - qt, g) * qt * log_qt - std::pow(1 - qt, g + 1));
      out.focal += (t * fl1 + (1 - t) * fl0) / n;
      out.d_logits(i, c) = w.dice_weight * d_dice_dp * p * (1 - p) / k + w.focal_weight * (t * d1 + (1 - t) * d0) / n;
    }
  }
  out.value = w.dice_weight * out.dice + w.focal_weight * out.focal;
  return out;
}

Matrix mask_targets(const metrics::Mask& mask) {
  Matrix t(mask.size(), 1);
  for (Eigen::Index y = 0; y < mask.rows(); ++y)
    for (Eigen::Index x = 0; x < mask.cols(); ++x) t(y * mask.cols() + x, 0) = mask(y, x) ? 1.0 : 0.0;
  return t;
}

void SegTrainConfig::validate() const {
  RVL_CHECK(epochs >= 1 && batch_size >= 1, ConfigError, "epochs and batch_size must be at least 1");
  RVL_CHECK(lr > 0 && weight_decay >= 0, ConfigError, "invalid segmentation optimizer settings");
}

double hard_dice(const std::vector<Matrix>& logits, const std::vector<Matrix>& targets) {
  RVL_CHECK(logits.size() == targets.size() && !logits.empty(), ShapeError, "hard_dice: one target per prediction");
  double total = 0;
  long count = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    RVL_CHECK(logits[i].rows() == targets[i].rows() && logits[i].cols() == targets[i].cols(), ShapeError,
              "hard_dice: shape mismatch");
    for (Eigen::Index c = 0; c < logits[i].cols(); ++c) {
      const metrics::Mask pred = logits[i].col(c).array() >= 0.0;  // p >= 0.5
      const metrics::Mask gt = targets[i].col(c).array() >= 0.5;
      total += (pred.any() || gt.any()) ? metrics::dice_iou(pred, gt).dice : 1.0;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::vector<std::map<int, Matrix>> frozen_features(const encoders::Model& model, const SegHeadConfig& config,
                                                   const std::vector<Image>& images) {
  config.validate(model.config.vision);
  const encoders::Model sized = model.config.vision.image_side == config.input_side
                                    ? model
                                    : encoders::with_image_side(model, config.input_side);
  std::vector<std::map<int, Matrix>> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    auto enc = encoders::encode_image(sized, img);
    std::map<int, Matrix> taps;
    for (int t : config.tap_layers) {
      const auto it = enc.layer_features.find(t);
      RVL_CHECK(it != enc.layer_features.end(), ConfigError,
                "encoder does not expose tap layer " + std::to_string(t) + " (add it to the encoder's tap_layers)");
      taps[t] = it->second;
    }
    out.push_back(std::move(taps));
  }
  return out;
}

SegmenterResult train_segmenter(const encoders::Model& model, const SegmentationHead& head,
                                const SegmentationData& train, const SegmentationData& val,
                                const SegTrainConfig& config) {
  config.validate();
  RVL_CHECK(train.images.size() == train.targets.size() && val.images.size() == val.targets.size(), ShapeError,
            "one target per image required");
  RVL_CHECK(!train.images.empty() && !val.images.empty(), ValidationError, "segmentation data is empty");
  const auto train_features = frozen_features(model, head.config(), train.images);
  const auto val_features = frozen_features(model, head.config(), val.images);

  SegmentationHead current = head;
  pretraining::AdamWOptions o;
  o.beta1 = 0.9;
  o.beta2 = 0.999;
  o.epsilon = 1e-8;
  o.weight_decay = config.weight_decay;
  pretraining::AdamW opt(o);
  std::mt19937_64 rng(derive_seed(config.seed, 0x5e9));
  std::vector<std::size_t> order(train.images.size());
  std::iota(order.begin(), order.end(), 0);

  SegmenterResult result;
  result.best_val_dice = -1;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(config.batch_size));
      ad::Tape tape;
      const auto h = tape.bind(current.params());
      std::vector<std::pair<ad::Var, Matrix>> seeds;
      for (std::size_t j = s; j < e; ++j) {
        const std::size_t i = order[j];
        const ad::Var z = current.forward(tape, h, train_features[i], train.images[i]);
        SegLoss l = seg_loss(z.value(), train.targets[i], current.config());
        if (!std::isfinite(l.value))
          throw NumericError("segmentation loss became non-finite at epoch " + std::to_string(epoch));
        epoch_loss += l.value;
        seeds.emplace_back(z, l.d_logits / static_cast<double>(e - s));
      }
      tape.backward(seeds);
      ParameterSet grads = current.params().zeros_like();
      tape.accumulate_param_grads(grads);
      opt.step(current.params(), grads, config.lr);
    }
    std::vector<Matrix> val_logits;
    for (std::size_t i = 0; i < val.images.size(); ++i)
      val_logits.push_back(segmentation_forward(current, val_features[i], val.images[i]));
    SegEpochLog log{epoch, epoch_loss / static_cast<double>(train.images.size()), hard_dice(val_logits, val.targets)};
    result.log.push_back(log);
    if (log.val_dice > result.best_val_dice) {
      result.best_val_dice = log.val_dice;
      result.best_epoch = epoch;
      result.head = current.params();
    }
  }
  return result;
}

}  // namespace retinavl::adaptation
