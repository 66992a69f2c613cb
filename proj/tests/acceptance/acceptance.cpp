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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//
//   acceptance            runs every criterion
//   acceptance masking    runs criteria whose name contains "masking"

#include "localization_oracles.hpp"
#include "oracles.hpp"
#include "stats_oracles.hpp"
#include "support/reader_fixture.hpp"
#include "support/synthetic.hpp"

#include "retinavl/adaptation/classifier.hpp"
#include "retinavl/adaptation/segmentation.hpp"
#include "retinavl/core/error.hpp"
#include "retinavl/localization/localization.hpp"
#include "retinavl/metrics/metrics.hpp"
#include "retinavl/metrics/stats.hpp"
#include "retinavl/pretraining/losses.hpp"
#include "retinavl/pretraining/trainer.hpp"
#include "retinavl/readerstudy/study.hpp"
#include "retinavl/zeroshot/zeroshot.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace retinavl;
namespace pt = retinavl::pretraining;
namespace adp = retinavl::adaptation;
namespace lz = retinavl::localization;
namespace zs = retinavl::zeroshot;
namespace rs = retinavl::readerstudy;
namespace mt = retinavl::metrics;

namespace {

// Collects failed checks for one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failures_.empty(); }
  std::string failures() const { return join(failures_); }
  std::string notes() const { return join(notes_); }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : "; ") + s;
    return out;
  }
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

Matrix rnd(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) { return random_normal(r, c, 1.0, rng); }

// Loss oracle.

void loss_oracle(Checks& c) {
  using namespace pt;
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> nd(1, 8), dd(2, 6);
  std::uniform_real_distribution<double> td(0.02, 2.0);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = nd(rng), d = dd(rng), f = dd(rng);
    const Matrix u = rnd(n, d, rng), v = rnd(n, d, rng), feat = rnd(n, f, rng);
    const double tau = td(rng);
    worst = std::max(worst, std::abs(clip_loss(similarity_matrix<double>(u, v, tau)) - oracle::clip_loss(u, v, tau)));
    worst = std::max(worst, std::abs(align_loss(gram_pair<double>(u, v)) - oracle::align_loss(u, v)));
    const Vector ws = rnd(f, 1, rng), wa = rnd(f, 1, rng), age = rnd(n, 1, rng);
    Eigen::VectorXi y(n);
    for (int i = 0; i < n; ++i) y(i) = static_cast<int>(rng() % 2);
    const Demographics<double> demo{y.cast<double>(), age, Vector::Ones(n), Vector::Ones(n)};
    const auto dl = demographic_losses<double>(feat, {ws, wa}, demo);
    worst = std::max(worst, std::abs(dl.sex - oracle::sex_loss(feat, ws, y)));
    worst = std::max(worst, std::abs(dl.age - oracle::age_loss(feat, wa, age)));
    LossWeights w = LossWeights::demographic();
    w.lambda_align = td(rng);
    w.lambda_sex = td(rng);
    w.lambda_age = td(rng);
    const double p[4] = {td(rng), td(rng), td(rng), td(rng)};
    const double expect = p[0] + w.lambda_align * p[1] + w.lambda_sex * p[2] + w.lambda_age * p[3];
    worst = std::max(worst, std::abs(total_loss(p[0], p[1], p[2], p[3], w) - expect));
  }
  c.expect(worst <= 1e-10, "max deviation " + num(worst));
  c.note("max deviation " + num(worst) + " over 200 instances");

  c.expect(clip_loss(SimilarityMatrix<double>{Matrix::Constant(1, 1, 0.3), 0.07}) == 0.0, "N=1 anchor");
  for (int n = 1; n <= 8; ++n) {
    const double l = clip_loss(SimilarityMatrix<double>{Matrix::Constant(n, n, 0.4), 0.5});
    c.expect(std::abs(l - std::log(n)) <= 1e-15 * std::max(1.0, std::log(n)), "uniform anchor N=" + std::to_string(n));
  }
  const Matrix u = rnd(4, 3, rng);
  c.expect(align_loss(gram_pair<double>(u, u)) == 0.0, "equal Grams anchor");
  Vector sex(5);
  sex << 1, 0, 0, 1, 1;
  const Vector zero = Vector::Zero(3);
  const auto dl = demographic_losses<double>(rnd(5, 3, rng), {zero, zero},
                                             {sex, Vector::Zero(5), Vector::Ones(5), Vector::Ones(5)});
  c.expect(dl.sex == std::log(2.0), "zero logits anchor");
}

// Gradient suite.

double objective_gradient_error(const pt::ObjectiveInputs<double>& in, const pt::LossWeights& w) {
  const auto res = pt::objective(in, w);
  const double h = 1e-5;
  double worst = 0;
  auto check = [&](double analytic, auto&& perturb) {
    pt::ObjectiveInputs<double> p = in, m = in;
    perturb(p, h);
    perturb(m, -h);
    const double numeric = (pt::objective(p, w).total - pt::objective(m, w).total) / (2 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1e-3, std::abs(numeric) + std::abs(analytic)));
  };
  for (Eigen::Index i = 0; i < in.image_embeddings.size(); ++i)
    check(res.grad.image_embeddings.data()[i], [i](auto& x, double d) { x.image_embeddings.data()[i] += d; });
  for (Eigen::Index i = 0; i < in.text_embeddings.size(); ++i)
    check(res.grad.text_embeddings.data()[i], [i](auto& x, double d) { x.text_embeddings.data()[i] += d; });
  for (Eigen::Index i = 0; i < in.image_features.size(); ++i)
    check(res.grad.image_features.data()[i], [i](auto& x, double d) { x.image_features.data()[i] += d; });
  for (Eigen::Index i = 0; i < in.heads.w_sex.size(); ++i) {
    check(res.grad.w_sex(i), [i](auto& x, double d) { x.heads.w_sex(i) += d; });
    check(res.grad.w_age(i), [i](auto& x, double d) { x.heads.w_age(i) += d; });
  }
  check(res.grad.log_temperature, [](auto& x, double d) { x.log_temperature += d; });
  return worst;
}

void gradients(Checks& c) {
  std::mt19937_64 rng(21);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 5;
    pt::ObjectiveInputs<double> in;
    in.image_embeddings = rnd(n, 4, rng);
    in.text_embeddings = rnd(n, 4, rng);
    in.image_features = rnd(n, 3, rng);
    in.log_temperature = std::log(0.2) + 0.3 * rnd(1, 1, rng)(0, 0);
    in.heads = {rnd(3, 1, rng), rnd(3, 1, rng)};
    Vector sex(n);
    for (int i = 0; i < n; ++i) sex(i) = static_cast<double>(rng() % 2);
    in.demographics = {sex, rnd(n, 1, rng), Vector::Ones(n), Vector::Ones(n)};
    worst = std::max(worst, objective_gradient_error(in, pt::LossWeights::demographic()));
  }
  c.expect(worst < 1e-4, "max relative error " + num(worst));
  c.note("max relative error " + num(worst) + " over 20 instances");
}

// Toy overfit.

void toy_overfit(Checks& c) {
  const auto cfg = encoders::ModelConfig::tiny();
  c.expect(cfg.vision.depth <= 2 && cfg.text.depth <= 2, "encoders deeper than 2 layers");
  c.expect(cfg.vision.width <= 64 && cfg.text.width <= 64, "encoders wider than 64");
  const auto model = encoders::Model::init(cfg, encoders::Tokenizer(), 4);
  const auto samples = synthetic::pairs(model, 32, 5);
  pt::TrainConfig tc;
  tc.peak_lr = 1e-3;
  tc.total_steps = 500;
  tc.warmup_steps = 20;
  tc.batch_size = 32;
  tc.seed = 12;
  auto state = pt::init_train_state(model, tc, pt::LossWeights::base());
  const auto log = pt::train_loop(state, samples).log;
  const double top1 = pt::retrieval_top1(state.model, samples);
  const double clip = pt::evaluate_clip_loss(state.model, samples);
  const auto ema = pt::ema_model(state);
  const double ema_top1 = pt::retrieval_top1(ema, samples);
  const double ema_clip = pt::evaluate_clip_loss(ema, samples);
  c.expect(log.size() == 500, "ran " + std::to_string(log.size()) + " steps");
  c.expect(top1 == 1.0, "raw top-1 " + num(top1));
  c.expect(clip < 0.1, "raw L_clip " + num(clip));
  c.note("raw top-1 " + num(top1) + ", L_clip " + num(clip) + "; EMA top-1 " + num(ema_top1) + ", L_clip " +
         num(ema_clip));
}

// Metric oracle.

void metric_oracle(Checks& c) {
  long cases = 0, mismatches = 0;
  auto compare = [&](const Vector& s, const mt::Labels& y) {
    const Eigen::VectorXi yi = y;
    const long np = yi.sum();
    if (np == 0 || np == yi.size()) return;
    ++cases;
    bool bad = mt::auroc(s, y) != oracle::auroc(s, yi) || mt::aupr(s, y) != oracle::aupr(s, yi) ||
               mt::sensitivity_at_specificity(s, y, 0.95) != oracle::sens_at_spec(s, yi, 0.95) ||
               mt::sensitivity_at_specificity(s, y, 0.6) != oracle::sens_at_spec(s, yi, 0.6);
    // Every distinct score as the threshold, plus one above them all.
    std::vector<double> ts = oracle::thresholds_desc(s);
    ts.push_back(s.maxCoeff() + 1.0);
    for (double t : ts) {
      const auto m = mt::confusion_metrics(s, y, t);
      const auto o = oracle::count_at(s, yi, t);
      const long n = yi.size();
      const double acc = static_cast<double>(o.tp + o.tn) / static_cast<double>(n);
      const double sens = static_cast<double>(o.tp) / static_cast<double>(o.tp + o.fn);
      const double spec = static_cast<double>(o.tn) / static_cast<double>(o.tn + o.fp);
      const double prec = o.tp + o.fp == 0 ? 0.0 : static_cast<double>(o.tp) / static_cast<double>(o.tp + o.fp);
      bad = bad || m.tp != o.tp || m.fp != o.fp || m.tn != o.tn || m.fn != o.fn || m.accuracy != acc ||
            m.sensitivity != sens || m.specificity != spec || m.precision != prec || m.f1 != oracle::f1_at(s, yi, t);
    }
    if (bad) ++mismatches;
  };
  // Every label vector crossed with every score vector over three levels.
  for (int n = 2; n <= 5; ++n) {
    long score_patterns = 1;
    for (int i = 0; i < n; ++i) score_patterns *= 3;
    for (long sp = 0; sp < score_patterns; ++sp)
      for (long lp = 0; lp < (1L << n); ++lp) {
        Vector s(n);
        mt::Labels y(n);
        long code = sp;
        for (int i = 0; i < n; ++i, code /= 3) {
          s(i) = 0.25 * static_cast<double>(code % 3);
          y(i) = static_cast<int>((lp >> i) & 1);
        }
        compare(s, y);
      }
  }
  const long exhaustive = cases;
  // Larger sizes up to 12, sampled.
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.5);
  for (int n = 6; n <= 12; ++n) {
    std::uniform_int_distribution<int> level(0, n <= 8 ? 3 : 5);
    for (int trial = 0; trial < 300; ++trial) {
      Vector s(n);
      mt::Labels y(n);
      for (int i = 0; i < n; ++i) {
        s(i) = 0.1 * level(rng);
        y(i) = coin(rng) ? 1 : 0;
      }
      compare(s, y);
    }
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " mismatching datasets");
  c.expect(cases >= 5000, "only " + std::to_string(cases) + " cases");

  std::bernoulli_distribution sparse(0.3);
  double worst_identity = 0;
  int pairs = 0;
  while (pairs < 1000) {
    mt::Mask p(12, 12), g(12, 12);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      p.data()[i] = sparse(rng);
      g.data()[i] = sparse(rng);
    }
    if (!p.any() && !g.any()) continue;
    const auto r = mt::dice_iou(p, g);
    worst_identity = std::max(worst_identity, std::abs(r.dice - 2 * r.iou / (1 + r.iou)));
    ++pairs;
  }
  c.expect(worst_identity <= 1e-12, "DSC/IoU identity off by " + num(worst_identity));

  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> corner(0, 11), extent(1, 5);
  double worst_pro = 0, worst_dice = 0;
  for (int trial = 0; trial < 100; ++trial) {
    mt::Mask gt = mt::Mask::Constant(16, 16, false);
    const int blobs = 1 + trial % 3;
    for (int b = 0; b < blobs; ++b) gt.block(corner(rng), corner(rng), extent(rng), extent(rng)) = true;
    Matrix h(16, 16);
    for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = u(rng) + (gt(i) ? 0.3 : 0.0);
    // Coarse levels on every other map so ties are exercised too.
    if (trial % 2) h = (h.array() * 8).floor().matrix();
    const auto g = lz::GroundTruthMask::from_mask(gt);
    worst_pro = std::max(worst_pro, std::abs(lz::pro_score(h, g, 0.3) - oracle::pro(h, gt, 0.3)));
    worst_dice = std::max(worst_dice, std::abs(lz::best_threshold_segmentation(h, g).dice - oracle::best_dice(h, gt)));
  }
  c.expect(worst_pro <= 1e-6, "PRO off by " + num(worst_pro));
  c.expect(worst_dice <= 1e-6, "best DSC off by " + num(worst_dice));
  c.note(std::to_string(cases) + " datasets (" + std::to_string(exhaustive) + " exhaustive), PRO err " +
         num(worst_pro) + ", DSC err " + num(worst_dice));
}

// Statistics.

double mean_metric(const mt::ScoreSet& s) { return s.scores.col(0).mean(); }

mt::ScoreSet normal_sample(std::mt19937_64& rng, int n, double mu) {
  std::normal_distribution<double> g(mu, 1.0);
  mt::ScoreSet s;
  s.scores.resize(n, 1);
  s.labels = mt::LabelMatrix::Zero(n, 1);
  for (int i = 0; i < n; ++i) s.scores(i, 0) = g(rng);
  return s;
}

void statistics(Checks& c) {
  const auto m = mt::mcnemar(std::vector<bool>(10, false), std::vector<bool>(10, true));
  c.expect(m.b == 0 && m.c == 10 && m.p_value == std::ldexp(1.0, -9), "McNemar(0,10) = " + num(m.p_value));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  double worst_t = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int na = 3 + trial % 5, nb = 4 + trial % 3;
    Vector a(na), b(nb);
    for (int i = 0; i < na; ++i) a(i) = g(rng);
    for (int i = 0; i < nb; ++i) b(i) = g(rng) + 0.8;
    // Closed form: pooled variance Student t.
    const double ma = a.mean(), mb = b.mean();
    const double ss = (a.array() - ma).square().sum() + (b.array() - mb).square().sum();
    const double dof = na + nb - 2.0;
    const double t = (ma - mb) / std::sqrt(ss / dof * (1.0 / na + 1.0 / nb));
    const auto r = mt::t_test_two_sided(a, b);
    worst_t = std::max({worst_t, std::abs(r.t - t), std::abs(r.dof - dof),
                        std::abs(r.p_value - oracle::t_two_sided_quadrature(std::abs(t), dof))});
  }
  c.expect(worst_t <= 1e-8, "t-test off by " + num(worst_t));

  const auto s = normal_sample(rng, 40, 0.0);
  const auto r1 = mt::bootstrap_ci(mean_metric, s, {500, 0.95, 42});
  const auto r2 = mt::bootstrap_ci(mean_metric, s, {500, 0.95, 42});
  c.expect(r1.ci_low == r2.ci_low && r1.ci_high == r2.ci_high, "bootstrap CI not deterministic");
  const auto p1 = mt::bootstrap_pvalue(mean_metric, s, normal_sample(rng, 40, 0.1), {500, 0.95, 42});
  c.expect(p1.p_value >= 0 && p1.p_value <= 1, "p-value out of range");

  int covered = 0;
  const int trials = 1000;
  std::mt19937_64 cov_rng(20260);
  for (int t = 0; t < trials; ++t) {
    const auto sample = normal_sample(cov_rng, 60, 3.0);
    const auto rep = mt::bootstrap_ci(mean_metric, sample, {1000, 0.95, static_cast<std::uint64_t>(t)});
    covered += rep.ci_low <= 3.0 && 3.0 <= rep.ci_high;
  }
  const double rate = static_cast<double>(covered) / trials;
  c.expect(rate >= 0.93 && rate <= 0.97, "coverage " + num(rate));
  c.note("coverage " + num(rate) + " over 1000 trials, t-test err " + num(worst_t));
}

// Zero-shot.

metrics::LabelMatrix one_hot(const std::vector<int>& y, int classes) {
  metrics::LabelMatrix m = metrics::LabelMatrix::Zero(static_cast<Eigen::Index>(y.size()), classes);
  for (std::size_t i = 0; i < y.size(); ++i) m(static_cast<Eigen::Index>(i), y[i]) = 1;
  return m;
}

void zero_shot(Checks& c) {
  std::mt19937_64 rng(5);
  // Planted text encoder: each prompt maps to a fixed vector.
  std::map<std::string, Vector> table;
  const std::vector<std::string> classes = {"normal", "drusen", "glaucoma", "DR"};
  const auto ensemble = zs::PromptEnsemble::from_templates(classes);
  for (const auto& prompts : ensemble.prompts)
    for (const auto& p : prompts) table[p] = rnd(6, 1, rng);
  const zs::TextEncoder encoder = [&table](const std::string& s) { return table.at(s); };
  const Matrix class_emb = zs::build_class_embeddings(ensemble, encoder);
  const Matrix images = rnd(7, 6, rng);
  const auto pred = zs::zero_shot_classify(images, class_emb, classes);
  bool exact = pred.scores.rows() == 7 && pred.scores.cols() == 4;
  for (int i = 0; exact && i < 7; ++i)
    for (int k = 0; k < 4; ++k) {
      // Class embedding oracle: normalized mean of the prompt vectors.
      Vector mean = Vector::Zero(6);
      for (const auto& p : ensemble.prompts[static_cast<std::size_t>(k)]) mean += table.at(p);
      mean /= static_cast<double>(ensemble.prompts[static_cast<std::size_t>(k)].size());
      mean /= mean.norm();
      exact = exact && std::abs(pred.scores(i, k) - oracle::cosine(images.row(i).transpose(), mean)) <= 1e-12;
    }
  c.expect(exact, "scores differ from the per-pair cosine oracle");

  using data::LabelMode;
  using data::LabelSchema;
  using data::TrimRule;
  LabelSchema pcv{{"normal", "wet-AMD", "PCV", "dry-AMD"}, LabelMode::single_label, {TrimRule::merge({"PCV"}, "wet-AMD")}};
  const auto t1 = zs::apply_benchmark_trim(one_hot({0, 2, 1, 2, 3, 2}, 4), pcv);
  c.expect(t1.classes == std::vector<std::string>{"normal", "wet-AMD", "dry-AMD"} &&
               t1.labels == one_hot({0, 1, 1, 1, 2, 1}, 3),
           "PCV merge");

  LabelSchema other{{"normal", "DR", "other diseases", "glaucoma"}, LabelMode::single_label,
                    {TrimRule::drop({"other diseases"})}};
  const auto t2 = zs::apply_benchmark_trim(one_hot({0, 2, 1, 3, 2}, 4), other);
  c.expect(t2.classes == std::vector<std::string>{"normal", "DR", "glaucoma"} &&
               t2.rows == std::vector<Eigen::Index>{0, 2, 3} && t2.labels == one_hot({0, 1, 2}, 3),
           "other diseases drop");
  zs::PredictionMatrix p;
  p.classes = other.classes;
  p.ids = {"a", "b", "c", "d", "e"};
  p.scores = rnd(5, 4, rng);
  const auto q = zs::trim_predictions(p, t2);
  c.expect(q.scores.cols() == 3 && q.ids == std::vector<std::string>{"a", "c", "d"} && q.scores(1, 2) == p.scores(2, 3),
           "other diseases drop on predictions");

  LabelSchema dr{{"normal", "DR1", "DR2", "DR3", "cataract"}, LabelMode::single_label,
                 {TrimRule::merge({"DR1", "DR2", "DR3"}, "DR")}};
  const auto t3 = zs::apply_benchmark_trim(one_hot({0, 1, 2, 3, 4, 3}, 5), dr);
  c.expect(t3.classes == std::vector<std::string>{"normal", "DR", "cataract"} &&
               t3.labels == one_hot({0, 1, 1, 1, 2, 1}, 3),
           "DR1/2/3 merge");
}

// Masking study.

struct MaskingData {
  std::vector<Image> images;
  std::vector<Matrix> true_heat;
  metrics::Labels labels;
};

// Positives carry a bright square at a random spot; the heatmap marks the square for every image.
MaskingData masking_data(int n, int side, std::mt19937_64& rng) {
  const int square = 5;
  std::normal_distribution<double> noise(0.5, 0.1);
  std::uniform_int_distribution<int> pos(0, side - square);
  MaskingData d;
  d.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const bool positive = i % 2 == 1;
    const int y0 = pos(rng), x0 = pos(rng);
    Image img(3, side, side, 0.0);
    for (auto& p : img.planes)
      for (Eigen::Index k = 0; k < p.size(); ++k) p.data()[k] = std::clamp(noise(rng), 0.0, 1.0);
    if (positive)
      for (auto& p : img.planes) p.block(y0, x0, square, square) += 0.4;
    Matrix heat = Matrix::Zero(side, side);
    heat.block(y0, x0, square, square).setOnes();
    d.images.push_back(std::move(img));
    d.true_heat.push_back(std::move(heat));
    d.labels(i) = positive ? 1 : 0;
  }
  return d;
}

Matrix flatten(const std::vector<Image>& images) {
  const auto& first = images.front();
  const Eigen::Index per = first.channels() * first.height() * first.width();
  Matrix x(static_cast<Eigen::Index>(images.size()), per);
  for (std::size_t i = 0; i < images.size(); ++i) {
    Eigen::Index k = 0;
    for (const auto& p : images[i].planes)
      for (Eigen::Index j = 0; j < p.size(); ++j) x(static_cast<Eigen::Index>(i), k++) = p.data()[j] - 0.5;
  }
  return x;
}

adp::TaskLabels binary(const metrics::Labels& y) {
  adp::TaskLabels t{metrics::LabelMatrix::Zero(y.size(), 2), data::LabelMode::single_label};
  for (Eigen::Index i = 0; i < y.size(); ++i) t.labels(i, y(i)) = 1;
  return t;
}

void masking(Checks& c) {
  const int side = 16;
  double true_drop = 0, random_drop = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const auto train = masking_data(200, side, rng);
    const auto val = masking_data(100, side, rng);
    const auto test = masking_data(200, side, rng);
    auto cfg = adp::ProbeConfig::linear_probe();
    cfg.head_lr = 1e-2;
    cfg.seed = seed;
    const auto probe = adp::train_probe(flatten(train.images), binary(train.labels), flatten(val.images),
                                       binary(val.labels), cfg);
    const lz::ImageClassifier classifier = [&probe](const std::vector<Image>& batch) -> Vector {
      return adp::predict_proba(flatten(batch), probe.head, data::LabelMode::single_label).col(1);
    };
    std::vector<Matrix> random_heat;
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 200; ++i) {
      Matrix h(side, side);
      for (Eigen::Index k = 0; k < h.size(); ++k) h(k) = u(rng);
      random_heat.push_back(std::move(h));
    }
    const auto t = lz::masking_study(test.images, test.true_heat, {0.0, 0.1}, classifier, test.labels);
    const auto r = lz::masking_study(test.images, random_heat, {0.0, 0.1}, classifier, test.labels);
    true_drop += (t[0].metric - t[1].metric) / 5;
    random_drop += (r[0].metric - r[1].metric) / 5;
    per_seed += (per_seed.empty() ? "" : ", ") + num(t[0].metric) + "->" + num(t[1].metric) + "/" + num(r[1].metric);
  }
  c.expect(true_drop >= 0.2, "true-heatmap drop " + num(true_drop));
  c.expect(random_drop < 0.05, "random-heatmap drop " + num(random_drop));
  c.note("mean drop true " + num(true_drop) + ", random " + num(random_drop) + " [AUROC base->true/random: " +
         per_seed + "]");
}

// Adaptation.

void adaptation_suite(Checks& c) {
  const auto model = encoders::Model::init(encoders::ModelConfig::tiny(), encoders::Tokenizer(), 1);
  std::mt19937_64 rng(5);

  // Probing leaves the encoder untouched.
  adp::ImageDataset train, val;
  for (int i = 0; i < 8; ++i) {
    Image img(3, 32, 32, i % 2 ? 0.8 : 0.2);
    for (auto& p : img.planes) p += 0.1 * random_normal(32, 32, 1.0, rng).array();
    (i < 6 ? train : val).images.push_back(img);
  }
  auto labels = [](int n) {
    adp::TaskLabels t{metrics::LabelMatrix::Zero(n, 2), data::LabelMode::single_label};
    for (int i = 0; i < n; ++i) t.labels(i, i % 2) = 1;
    return t;
  };
  train.targets = labels(6);
  val.targets = labels(2);
  const auto before = model.params.checksum();
  auto probe = adp::ProbeConfig::linear_probe();
  probe.epochs = 3;
  const auto r = adp::train_classifier(model, train, val, probe);
  c.expect(model.params.checksum() == before, "probing changed the model checksum");
  c.expect(r.encoder.checksum() == adp::vision_params(model).checksum(), "probing changed the encoder");

  // Checkpoint selection on scripted traces.
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> len(1, 12);
  bool selection_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<double, double>> trace;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) trace.emplace_back(std::round(u(rng) * 8) / 8, std::round(u(rng) * 8) / 8);
    std::size_t best = 0;
    for (std::size_t i = 1; i < trace.size(); ++i)
      if (trace[i].first + 0.5 * trace[i].second > trace[best].first + 0.5 * trace[best].second) best = i;
    selection_ok = selection_ok && adp::select_checkpoint(trace) == best;
  }
  c.expect(selection_ok, "checkpoint selection disagrees with argmax of AUROC+0.5*AUPR");

  // Subsampling rounds per class.
  bool subsample_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + trial % 4;
    const int n = 10 + static_cast<int>(rng() % 90);
    metrics::Labels y(n);
    for (int i = 0; i < n; ++i) y(i) = i < k ? i : static_cast<int>(rng() % static_cast<unsigned>(k));
    const double fraction = 0.01 + 0.99 * u(rng);
    const auto kept = adp::subsample_labels(y, k, fraction, static_cast<std::uint64_t>(trial));
    std::vector<long> have(static_cast<std::size_t>(k), 0), total(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) ++total[static_cast<std::size_t>(y(i))];
    for (auto i : kept) ++have[static_cast<std::size_t>(y(i))];
    for (int cls = 0; cls < k; ++cls) {
      const long want = std::max(1L, std::lround(fraction * static_cast<double>(total[static_cast<std::size_t>(cls)])));
      subsample_ok = subsample_ok && have[static_cast<std::size_t>(cls)] == want;
    }
    subsample_ok = subsample_ok && std::is_sorted(kept.begin(), kept.end()) &&
                   std::adjacent_find(kept.begin(), kept.end()) == kept.end();
  }
  c.expect(subsample_ok, "subsample counts differ from per-class rounding");

  // Segmentation head on synthetic blobs.
  const auto seg_train = synthetic::blobs(16, 64, 1);
  const auto seg_val = synthetic::blobs(8, 64, 2);
  const auto head = adp::SegmentationHead::init(adp::SegHeadConfig::tiny(), model.config.vision.width, 3);
  adp::SegTrainConfig sc;
  sc.epochs = 100;
  sc.lr = 1e-3;
  sc.batch_size = 4;
  const auto seg = adp::train_segmenter(model, head, seg_train, seg_val, sc);
  int first = 0;
  for (const auto& e : seg.log)
    if (e.val_dice > 0.9) {
      first = e.epoch;
      break;
    }
  c.expect(seg.best_val_dice > 0.9, "best val Dice " + num(seg.best_val_dice));
  c.note("val Dice > 0.9 first at epoch " + std::to_string(first) + ", best " + num(seg.best_val_dice));
}

// Reader study.

rs::Clock ticking() {
  auto t = std::make_shared<std::int64_t>(1000);
  return [t] { return (*t)++; };
}

template <typename F>
std::optional<rs::Violation> violation_of(F&& f) {
  try {
    f();
  } catch (const rs::ProtocolViolation& e) {
    return e.violation();
  }
  return std::nullopt;
}

template <typename F>
bool rejects(F&& f) {
  try {
    f();
  } catch (const Error&) {
    return true;
  }
  return false;
}

rs::Outcome expected_outcome(bool prelim_ok, bool modified, bool final_ok, bool top1_is_truth, bool top1_is_prelim,
                             bool truth_in_top5, bool corrective_top5) {
  using rs::Outcome;
  if (modified) {
    if (!prelim_ok && final_ok) return Outcome::optimal_revision;
    if (!prelim_ok && !final_ok) return Outcome::ineffective_correction;
    return Outcome::risk_inducing_revision;
  }
  if (prelim_ok) return top1_is_truth ? Outcome::optimal_collaboration : Outcome::independent_success;
  if (top1_is_prelim) return Outcome::ineffective_validation;
  if (top1_is_truth) return Outcome::persistent_error;
  if (corrective_top5 && truth_in_top5) return Outcome::persistent_error;
  return Outcome::uncategorized;
}

void reader_study(Checks& c) {
  using namespace rs;
  const std::string truth = "A";
  long total = 0, wrong = 0, partition = 0;
  std::map<Outcome, long> seen;
  for (bool flag : {false, true})
    for (const std::string prelim : {"A", "B", "C"})
      for (const std::string final_dx : {"A", "B", "C", "D"})
        for (const std::string top1 : {"A", "B", "C", "D", "E"})
          for (bool listed : {false, true}) {
            if (top1 == truth && !listed) continue;
            AssistancePayload p;
            std::vector<std::string> ranked = {top1};
            if (listed && top1 != truth) ranked.push_back(truth);
            for (const auto& n : {"D", "B", "F", "G", "E", "C"})
              if (ranked.size() < 5 && std::find(ranked.begin(), ranked.end(), n) == ranked.end() && n != truth)
                ranked.push_back(n);
            for (std::size_t r = 0; r < 5; ++r) p.top5_diseases.emplace_back(ranked[r], 1.0 - 0.1 * static_cast<double>(r));
            const ReadingRecord rec{"x", Stage1{prelim, 3, 0}, Stage2{final_dx, 3, {3, 3, 3}, 0}};
            const auto b = classify_behavior(rec, p, truth, {flag});
            const bool modified = final_dx != prelim;
            if (b.outcome != expected_outcome(prelim == truth, modified, final_dx == truth, top1 == truth,
                                              top1 == prelim, listed || top1 == truth, flag))
              ++wrong;
            const bool modified_outcome = b.outcome == Outcome::optimal_revision ||
                                          b.outcome == Outcome::ineffective_correction ||
                                          b.outcome == Outcome::risk_inducing_revision;
            if (modified_outcome != modified || (b.behavior == Behavior::modified) != modified) ++partition;
            ++seen[b.outcome];
            ++total;
          }
  c.expect(wrong == 0, std::to_string(wrong) + " of " + std::to_string(total) + " truth-table rows differ");
  c.expect(partition == 0, "partition property broken on " + std::to_string(partition) + " rows");
  c.expect(seen.size() == kOutcomes.size(), "only " + std::to_string(seen.size()) + " outcomes reachable");

  // Constructed study.
  const auto dir = std::filesystem::temp_directory_path() / "rvl_acceptance_reader";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  Study study(reader_fixture::config(), ticking());
  study.open_log(dir / "events.jsonl");
  reader_fixture::run(study);
  AggregateOptions opts;
  opts.bootstrap_resamples = 200;
  const auto report = aggregate_results(study.sessions(), study.config(), study.questionnaires(), opts);
  c.expect(report.readings == 1000, "readings " + std::to_string(report.readings));
  c.expect(report.accuracy[0].pre == 0.584 && report.accuracy[0].post == 0.732,
           "accuracy " + num(report.accuracy[0].pre) + " -> " + num(report.accuracy[0].post));

  // Replay.
  const auto replayed = Study::replay(reader_fixture::config(), dir / "events.jsonl");
  c.expect(aggregate_results(replayed->sessions(), replayed->config(), replayed->questionnaires(), opts).to_json() ==
               report.to_json(),
           "replayed report differs");

  // Protocol violations.
  Study fresh(reader_fixture::config(5, 1), ticking());
  const auto sid = fresh.create_session("reader-0", 3);
  const auto order = fresh.session(sid).order;
  const std::string dx = fresh.config().case_by_id(order[0]).ground_truth;
  c.expect(violation_of([&] { fresh.get_assistance(sid, order[0]); }) == Violation::assistance_locked,
           "early assistance fetch accepted");
  fresh.submit_stage1(sid, order[0], dx, 3);
  c.expect(violation_of([&] { fresh.submit_stage1(sid, order[0], dx, 4); }) == Violation::already_committed,
           "stage 1 edit accepted");
  fresh.get_assistance(sid, order[0]);
  c.expect(rejects([&] { fresh.submit_stage2(sid, order[0], dx, 3, {3, 0, 3}); }), "missing rating accepted");
  fresh.submit_stage2(sid, order[0], dx, 3, {3, 3, 3});
  c.expect(violation_of([&] { fresh.submit_stage2(sid, order[0], dx, 1, {1, 1, 1}); }) == Violation::already_committed,
           "retroactive stage 2 edit accepted");
  c.expect(violation_of([&] { fresh.submit_stage1(sid, order[0], dx, 1); }) == Violation::already_committed,
           "retroactive stage 1 edit accepted");
  c.note(std::to_string(total) + " truth-table rows, accuracy " + num(report.accuracy[0].pre) + " -> " +
         num(report.accuracy[0].post));
  std::filesystem::remove_all(dir);
}

struct Criterion {
  std::string name;
  std::function<void(Checks&)> run;
  double budget_seconds;  ///< 0: no stated runtime bound
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"loss-oracle", loss_oracle, 10},       {"gradients", gradients, 60},
      {"toy-overfit", toy_overfit, 300},      {"metric-oracle", metric_oracle, 120},
      {"statistics", statistics, 0},          {"zero-shot", zero_shot, 0},
      {"masking-ordering", masking, 0},       {"adaptation", adaptation_suite, 0},
      {"reader-study", reader_study, 0},
  };
  const std::string filter = argc > 1 ? argv[1] : "";
  int failed = 0;
  for (const auto& criterion : criteria) {
    if (criterion.name.find(filter) == std::string::npos) continue;
    Checks checks;
    const auto start = std::chrono::steady_clock::now();
    try {
      criterion.run(checks);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (criterion.budget_seconds > 0)
      checks.expect(seconds < criterion.budget_seconds,
                    "took " + num(seconds) + " s, budget " + num(criterion.budget_seconds) + " s");
    std::ostringstream line;
    line << (checks.ok() ? "PASS " : "FAIL ") << criterion.name << " (" << num(seconds) << " s)";
    if (!checks.ok()) line << ": " << checks.failures();
    else if (!checks.notes().empty()) line << ": " << checks.notes();
    std::puts(line.str().c_str());
    std::fflush(stdout);
    failed += checks.ok() ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
