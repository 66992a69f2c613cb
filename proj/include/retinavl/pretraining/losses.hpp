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

// Image-report pretraining objectives.
//
//   clip:  symmetric InfoNCE over the N x N cosine matrix s_ij / tau
//   align: mean squared difference of the within-image and within-text
//          cosine Gram matrices
//   sex:   mean BCE of sigmoid(w_sex . f_i) against y_i in {0, 1}
//   age:   mean squared error of w_age . f_i against a_i
//
// The total objective is clip + l_align * align (+ l_age * age + l_sex * sex
// for the demographic variant). Rows without demographics are masked out of
// the sex/age means.
//
// Everything here is templated on the scalar type so that gradient checks run
// in double while the same code serves float callers.

#pragma once

#include "retinavl/core/error.hpp"
#include "retinavl/core/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace retinavl::pretraining {

inline constexpr double kMinTemperature = 0.01;
inline constexpr double kInitTemperature = 0.07;

/// Temperature from its log parameterization, clamped to kMinTemperature.
template <typename Scalar>
Scalar temperature_from_log(Scalar log_tau) {
  using std::exp;
  return std::max(exp(log_tau), Scalar(kMinTemperature));
}

template <typename Scalar>
struct SimilarityMatrix {
  MatrixX<Scalar> s;
  Scalar temperature = Scalar(1);
};

template <typename Scalar>
struct GramPair {
  MatrixX<Scalar> s_img;
  MatrixX<Scalar> s_txt;
};

template <typename Scalar>
struct DemographicHeads {
  VectorX<Scalar> w_sex;
  VectorX<Scalar> w_age;
};

/// Sex labels in {0, 1} and ages; rows with a zero mask entry are ignored.
template <typename Scalar>
struct Demographics {
  VectorX<Scalar> sex;
  VectorX<Scalar> age;
  VectorX<Scalar> sex_mask;
  VectorX<Scalar> age_mask;

  static Demographics complete(const VectorX<Scalar>& sex, const VectorX<Scalar>& age) {
    return {sex, age, VectorX<Scalar>::Ones(sex.size()), VectorX<Scalar>::Ones(age.size())};
  }
};

enum class Variant { base, demographic };

struct LossWeights {
  double lambda_align = 1.0;
  double lambda_age = 1.0;
  double lambda_sex = 0.1;
  Variant variant = Variant::base;

  static LossWeights base(double lambda_align = 1.0) { return {lambda_align, 0.0, 0.0, Variant::base}; }
  static LossWeights demographic(double lambda_align = 1.0, double lambda_age = 1.0, double lambda_sex = 0.1) {
    return {lambda_align, lambda_age, lambda_sex, Variant::demographic};
  }

  /// Rejects negative weights and non-zero demographic weights on the base variant.
  void validate() const {
    RVL_CHECK(lambda_align >= 0 && lambda_age >= 0 && lambda_sex >= 0, ConfigError,
              "loss weights must be non-negative");
    RVL_CHECK(variant == Variant::demographic || (lambda_age == 0 && lambda_sex == 0), ConfigError,
              "base variant requires lambda_age = lambda_sex = 0");
  }
};

struct LossRecord {
  double clip = 0;
  double align = 0;
  double sex = 0;
  double age = 0;
  double total = 0;
};

namespace detail {

template <typename Scalar>
MatrixX<Scalar> unit_rows(const MatrixX<Scalar>& m, VectorX<Scalar>* norms = nullptr) {
  VectorX<Scalar> n = m.rowwise().norm();
  if ((n.array() <= Scalar(0)).any() || !n.allFinite())
    throw NumericError("cosine similarity of a zero or non-finite row");
  if (norms) *norms = n;
  return n.asDiagonal().inverse() * m;
}

// Gradient wrt raw rows given the gradient wrt their normalized versions.
template <typename Scalar>
MatrixX<Scalar> through_normalization(const MatrixX<Scalar>& unit, const VectorX<Scalar>& norms,
                                      const MatrixX<Scalar>& grad_unit) {
  const VectorX<Scalar> radial = (unit.array() * grad_unit.array()).rowwise().sum();
  MatrixX<Scalar> g = grad_unit - radial.asDiagonal() * unit;
  return norms.asDiagonal().inverse() * g;
}

template <typename Scalar>
Scalar softplus(Scalar z) {
  using std::exp;
  using std::log1p;
  return z > Scalar(0) ? z + log1p(exp(-z)) : log1p(exp(z));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  using std::exp;
  return z >= Scalar(0) ? Scalar(1) / (Scalar(1) + exp(-z)) : exp(z) / (Scalar(1) + exp(z));
}

}  // namespace detail

/// s_ij = u_i . v_j / (|u_i| |v_j|).
template <typename Scalar>
SimilarityMatrix<Scalar> similarity_matrix(const MatrixX<Scalar>& u, const MatrixX<Scalar>& v,
                                           Scalar temperature = Scalar(1)) {
  RVL_CHECK(u.rows() == v.rows() && u.cols() == v.cols(), ShapeError,
            "similarity_matrix: U and V must have equal shapes");
  RVL_CHECK(temperature > Scalar(0), NumericError, "temperature must be positive");
  return {detail::unit_rows(u) * detail::unit_rows(v).transpose(), temperature};
}

template <typename Scalar>
GramPair<Scalar> gram_pair(const MatrixX<Scalar>& u, const MatrixX<Scalar>& v) {
  RVL_CHECK(u.rows() == v.rows(), ShapeError, "gram_pair: row count mismatch");
  const MatrixX<Scalar> uu = detail::unit_rows(u);
  const MatrixX<Scalar> vv = detail::unit_rows(v);
  return {uu * uu.transpose(), vv * vv.transpose()};
}

/// Row-wise log-sum-exp.
template <typename Scalar>
VectorX<Scalar> logsumexp_rows(const MatrixX<Scalar>& z) {
  const VectorX<Scalar> m = z.rowwise().maxCoeff();
  return m.array() + (z.colwise() - m).array().exp().rowwise().sum().log();
}

template <typename Scalar>
Scalar clip_loss(const SimilarityMatrix<Scalar>& sim) {
  const auto n = sim.s.rows();
  RVL_CHECK(n >= 1 && sim.s.cols() == n, ShapeError, "clip_loss needs a non-empty square matrix");
  RVL_CHECK(sim.temperature > Scalar(0), NumericError, "temperature must be positive");
  RVL_CHECK(sim.s.allFinite(), NumericError, "clip_loss: non-finite similarity");
  const MatrixX<Scalar> z = sim.s / sim.temperature;
  const VectorX<Scalar> diag = z.diagonal();
  const Scalar i2t = (logsumexp_rows<Scalar>(z) - diag).mean();
  const Scalar t2i = (logsumexp_rows<Scalar>(z.transpose()) - diag).mean();
  return Scalar(0.5) * (i2t + t2i);
}

template <typename Scalar>
Scalar align_loss(const GramPair<Scalar>& g) {
  RVL_CHECK(g.s_img.rows() == g.s_txt.rows() && g.s_img.cols() == g.s_txt.cols(), ShapeError,
            "align_loss: Gram shapes differ");
  RVL_CHECK(g.s_img.size() > 0, ShapeError, "align_loss: empty Gram matrices");
  return (g.s_img - g.s_txt).squaredNorm() / static_cast<Scalar>(g.s_img.size());
}

template <typename Scalar>
struct DemographicLosses {
  Scalar sex = Scalar(0);
  Scalar age = Scalar(0);
};

template <typename Scalar>
DemographicLosses<Scalar> demographic_losses(const MatrixX<Scalar>& features,
                                             const DemographicHeads<Scalar>& heads,
                                             const Demographics<Scalar>& demo) {
  const auto n = features.rows();
  RVL_CHECK(n > 0, ValidationError, "demographic_losses: empty batch");
  RVL_CHECK(heads.w_sex.size() == features.cols() && heads.w_age.size() == features.cols(),
            ShapeError, "demographic head width differs from feature width");
  RVL_CHECK(demo.sex.size() == n && demo.age.size() == n && demo.sex_mask.size() == n &&
                demo.age_mask.size() == n,
            ShapeError, "demographic labels differ from batch size");
  DemographicLosses<Scalar> out;
  const VectorX<Scalar> zs = features * heads.w_sex;
  const VectorX<Scalar> za = features * heads.w_age;
  const Scalar ns = demo.sex_mask.sum();
  const Scalar na = demo.age_mask.sum();
  if (ns > Scalar(0)) {
    Scalar acc(0);
    for (Eigen::Index i = 0; i < n; ++i)
      acc += demo.sex_mask(i) * (detail::softplus(zs(i)) - demo.sex(i) * zs(i));
    out.sex = acc / ns;
  }
  if (na > Scalar(0)) out.age = (demo.age_mask.array() * (za - demo.age).array().square()).sum() / na;
  return out;
}

template <typename Scalar>
Scalar total_loss(Scalar clip, Scalar align, Scalar sex, Scalar age, const LossWeights& w) {
  w.validate();
  RVL_CHECK(std::isfinite(static_cast<double>(clip)) && std::isfinite(static_cast<double>(align)) &&
                std::isfinite(static_cast<double>(sex)) && std::isfinite(static_cast<double>(age)),
            NumericError, "total_loss: non-finite component");
  Scalar total = clip + Scalar(w.lambda_align) * align;
  if (w.variant == Variant::demographic)
    total += Scalar(w.lambda_age) * age + Scalar(w.lambda_sex) * sex;
  return total;
}

/// Inputs of the full objective for one batch.
template <typename Scalar>
struct ObjectiveInputs {
  MatrixX<Scalar> image_embeddings;  ///< N x D, any norm
  MatrixX<Scalar> text_embeddings;   ///< N x D, any norm
  MatrixX<Scalar> image_features;    ///< N x F pre-projection features
  Scalar log_temperature = Scalar(std::log(kInitTemperature));
  DemographicHeads<Scalar> heads;    ///< unused by the base variant
  Demographics<Scalar> demographics; ///< unused by the base variant
};

template <typename Scalar>
struct ObjectiveGradients {
  MatrixX<Scalar> image_embeddings;
  MatrixX<Scalar> text_embeddings;
  MatrixX<Scalar> image_features;
  Scalar log_temperature = Scalar(0);
  VectorX<Scalar> w_sex;
  VectorX<Scalar> w_age;
};

template <typename Scalar>
struct ObjectiveResult {
  LossRecord record;
  Scalar total = Scalar(0);
  ObjectiveGradients<Scalar> grad;
};

/// Value and analytic gradient of the full objective.
template <typename Scalar>
ObjectiveResult<Scalar> objective(const ObjectiveInputs<Scalar>& in, const LossWeights& w) {
  w.validate();
  const auto n = in.image_embeddings.rows();
  RVL_CHECK(n >= 1 && in.text_embeddings.rows() == n &&
                in.text_embeddings.cols() == in.image_embeddings.cols(),
            ShapeError, "objective: embedding shapes differ");
  VectorX<Scalar> u_norm, v_norm;
  const MatrixX<Scalar> u = detail::unit_rows(in.image_embeddings, &u_norm);
  const MatrixX<Scalar> v = detail::unit_rows(in.text_embeddings, &v_norm);
  const Scalar tau = temperature_from_log(in.log_temperature);
  const bool clamped = std::exp(in.log_temperature) < Scalar(kMinTemperature);

  ObjectiveResult<Scalar> res;
  const SimilarityMatrix<Scalar> sim{u * v.transpose(), tau};
  const GramPair<Scalar> gram{u * u.transpose(), v * v.transpose()};
  const Scalar l_clip = clip_loss(sim);
  const Scalar l_align = align_loss(gram);

  // d clip / d logits: row-softmax minus identity and column-softmax minus identity.
  const MatrixX<Scalar> z = sim.s / tau;
  const MatrixX<Scalar> row_sm = (z.colwise() - logsumexp_rows<Scalar>(z)).array().exp();
  const MatrixX<Scalar> zt = z.transpose();
  const MatrixX<Scalar> col_sm = MatrixX<Scalar>((zt.colwise() - logsumexp_rows<Scalar>(zt)).array().exp()).transpose();
  const MatrixX<Scalar> eye = MatrixX<Scalar>::Identity(n, n);
  const MatrixX<Scalar> d_logits = (row_sm - eye + col_sm - eye) / (Scalar(2) * static_cast<Scalar>(n));
  const MatrixX<Scalar> d_sim = d_logits / tau;
  const Scalar d_tau = -(d_logits.array() * sim.s.array()).sum() / (tau * tau);
  res.grad.log_temperature = clamped ? Scalar(0) : d_tau * tau;

  const MatrixX<Scalar> diff = gram.s_img - gram.s_txt;
  const MatrixX<Scalar> d_gram = Scalar(4 * w.lambda_align) * diff / static_cast<Scalar>(n * n);
  const MatrixX<Scalar> du = d_sim * v + d_gram * u;
  const MatrixX<Scalar> dv = d_sim.transpose() * u - d_gram * v;
  res.grad.image_embeddings = detail::through_normalization(u, u_norm, du);
  res.grad.text_embeddings = detail::through_normalization(v, v_norm, dv);

  Scalar l_sex(0), l_age(0);
  res.grad.image_features = MatrixX<Scalar>::Zero(in.image_features.rows(), in.image_features.cols());
  if (w.variant == Variant::demographic) {
    const auto& f = in.image_features;
    const auto& demo = in.demographics;
    RVL_CHECK(f.rows() == n, ShapeError, "objective: feature rows differ from batch size");
    const auto losses = demographic_losses(f, in.heads, demo);
    l_sex = losses.sex;
    l_age = losses.age;
    const Scalar ns = demo.sex_mask.sum();
    const Scalar na = demo.age_mask.sum();
    VectorX<Scalar> dz_sex = VectorX<Scalar>::Zero(n);
    VectorX<Scalar> dz_age = VectorX<Scalar>::Zero(n);
    const VectorX<Scalar> zs = f * in.heads.w_sex;
    const VectorX<Scalar> za = f * in.heads.w_age;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (ns > Scalar(0))
        dz_sex(i) = Scalar(w.lambda_sex) * demo.sex_mask(i) * (detail::sigmoid(zs(i)) - demo.sex(i)) / ns;
      if (na > Scalar(0))
        dz_age(i) = Scalar(2 * w.lambda_age) * demo.age_mask(i) * (za(i) - demo.age(i)) / na;
    }
    res.grad.w_sex = f.transpose() * dz_sex;
    res.grad.w_age = f.transpose() * dz_age;
    res.grad.image_features = dz_sex * in.heads.w_sex.transpose() + dz_age * in.heads.w_age.transpose();
  } else {
    res.grad.w_sex = VectorX<Scalar>::Zero(in.heads.w_sex.size());
    res.grad.w_age = VectorX<Scalar>::Zero(in.heads.w_age.size());
  }

  res.total = total_loss(l_clip, l_align, l_sex, l_age, w);
  res.record = {static_cast<double>(l_clip), static_cast<double>(l_align), static_cast<double>(l_sex),
                static_cast<double>(l_age), static_cast<double>(res.total)};
  return res;
}

}  // namespace retinavl::pretraining
