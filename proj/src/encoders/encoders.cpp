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

#include "retinavl/encoders/encoders.hpp"

#include "retinavl/core/archive.hpp"
#include "retinavl/core/error.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace retinavl::encoders {

using nlohmann::json;

void VisionEncoderConfig::validate() const {
  RVL_CHECK(image_side > 0 && patch_side > 0, ConfigError, "image_side and patch_side must be positive");
  RVL_CHECK(image_side % patch_side == 0, ConfigError, "image_side must be divisible by patch_side");
  RVL_CHECK(depth >= 1 && heads >= 1 && width >= 1 && channels >= 1, ConfigError, "vision sizes must be positive");
  RVL_CHECK(width % heads == 0, ConfigError, "vision width must be divisible by heads");
  for (int t : tap_layers)
    RVL_CHECK(t >= 1 && t <= depth, ConfigError, "tap layer " + std::to_string(t) + " outside [1, depth]");
}

void TextEncoderConfig::validate() const {
  RVL_CHECK(max_tokens >= 2, ConfigError, "max_tokens must be >= 2");
  RVL_CHECK(depth >= 1 && heads >= 1 && width >= 1, ConfigError, "text sizes must be positive");
  RVL_CHECK(width % heads == 0, ConfigError, "text width must be divisible by heads");
}

void ModelConfig::validate() const {
  vision.validate();
  text.validate();
  RVL_CHECK(embed_dim >= 1, ConfigError, "embed_dim must be positive");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.vision = {32, 8, 2, 2, 32, {1, 2}, 3};
  c.text = {2, 32, 32, 2};
  c.embed_dim = 32;
  return c;
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"vision",
            {{"image_side", c.vision.image_side},
             {"patch_side", c.vision.patch_side},
             {"depth", c.vision.depth},
             {"heads", c.vision.heads},
             {"width", c.vision.width},
             {"tap_layers", c.vision.tap_layers},
             {"channels", c.vision.channels}}},
           {"text",
            {{"depth", c.text.depth},
             {"max_tokens", c.text.max_tokens},
             {"width", c.text.width},
             {"heads", c.text.heads}}},
           {"embed_dim", c.embed_dim}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  const json v = j.value("vision", json::object());
  const json t = j.value("text", json::object());
  c.vision.image_side = v.value("image_side", d.vision.image_side);
  c.vision.patch_side = v.value("patch_side", d.vision.patch_side);
  c.vision.depth = v.value("depth", d.vision.depth);
  c.vision.heads = v.value("heads", d.vision.heads);
  c.vision.width = v.value("width", d.vision.width);
  c.vision.tap_layers = v.value("tap_layers", d.vision.tap_layers);
  c.vision.channels = v.value("channels", d.vision.channels);
  c.text.depth = t.value("depth", d.text.depth);
  c.text.max_tokens = t.value("max_tokens", d.text.max_tokens);
  c.text.width = t.value("width", d.text.width);
  c.text.heads = t.value("heads", d.text.heads);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
}

namespace {

void add_layer_norm(ParameterSet& p, const std::string& name, int width) {
  p.add(name + ".g", Matrix::Ones(1, width));
  p.add(name + ".b", Matrix::Zero(1, width));
}

void add_block(ParameterSet& p, const std::string& prefix, int width, int depth, std::mt19937_64& rng) {
  const double std_w = 0.02;
  // Residual branches are scaled down with depth so deep stacks start near identity.
  const double std_out = 0.02 / std::sqrt(2.0 * depth);
  add_layer_norm(p, prefix + ".ln1", width);
  p.add(prefix + ".attn.qkv.w", random_normal(width, 3 * width, std_w, rng));
  p.add(prefix + ".attn.qkv.b", Matrix::Zero(1, 3 * width));
  p.add(prefix + ".attn.out.w", random_normal(width, width, std_out, rng));
  p.add(prefix + ".attn.out.b", Matrix::Zero(1, width));
  add_layer_norm(p, prefix + ".ln2", width);
  p.add(prefix + ".mlp.fc.w", random_normal(width, 4 * width, std_w, rng));
  p.add(prefix + ".mlp.fc.b", Matrix::Zero(1, 4 * width));
  p.add(prefix + ".mlp.proj.w", random_normal(4 * width, width, std_out, rng));
  p.add(prefix + ".mlp.proj.b", Matrix::Zero(1, width));
}

const ad::Var& at(const Bindings& p, const std::string& name) {
  auto it = p.find(name);
  RVL_CHECK(it != p.end(), ConfigError, "missing parameter " + name);
  return it->second;
}

ad::Var layer_norm(const Bindings& p, const std::string& name, ad::Var x) {
  return ad::layer_norm(x, at(p, name + ".g"), at(p, name + ".b"));
}

ad::Var linear(const Bindings& p, const std::string& name, ad::Var x) {
  return ad::add_row(ad::matmul(x, at(p, name + ".w")), at(p, name + ".b"));
}

// Multi-head self-attention; a non-empty mask (T x T, 0 or a large negative) is added to the scores.
ad::Var attention(const Bindings& p, const std::string& prefix, ad::Var x, int heads, const Matrix& mask) {
  const auto width = x.cols();
  const auto dh = width / heads;
  const ad::Var qkv = linear(p, prefix + ".qkv", x);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const ad::Var q = ad::slice_cols(qkv, h * dh, dh);
    const ad::Var k = ad::slice_cols(qkv, width + h * dh, dh);
    const ad::Var v = ad::slice_cols(qkv, 2 * width + h * dh, dh);
    ad::Var scores = ad::scale(ad::matmul_nt(q, k), scale);
    if (mask.size() != 0) scores = ad::add_const(scores, mask);
    outs.push_back(ad::matmul(ad::softmax_rows(scores), v));
  }
  const ad::Var merged = heads == 1 ? outs.front() : ad::concat_cols(outs);
  return linear(p, prefix + ".out", merged);
}

ad::Var block(const Bindings& p, const std::string& prefix, ad::Var x, int heads, const Matrix& mask) {
  x = ad::add(x, attention(p, prefix + ".attn", layer_norm(p, prefix + ".ln1", x), heads, mask));
  const ad::Var h = ad::gelu(linear(p, prefix + ".mlp.fc", layer_norm(p, prefix + ".ln2", x)));
  return ad::add(x, linear(p, prefix + ".mlp.proj", h));
}

Matrix causal_mask(Eigen::Index n) {
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = -1e30;
  return m;
}

}  // namespace

Model Model::init(const ModelConfig& config, Tokenizer tokenizer, std::uint64_t seed) {
  config.validate();
  Model m{config, std::move(tokenizer), {}};
  std::mt19937_64 rng(seed);
  const auto& v = config.vision;
  const auto& t = config.text;
  ParameterSet& p = m.params;
  const int patch_dim = v.channels * v.patch_side * v.patch_side;
  p.add("visual.patch_embed", random_normal(patch_dim, v.width, 1.0 / std::sqrt(patch_dim), rng));
  p.add("visual.cls", random_normal(1, v.width, 0.02, rng));
  p.add("visual.pos", random_normal(v.patch_count() + 1, v.width, 0.01, rng));
  add_layer_norm(p, "visual.ln_pre", v.width);
  for (int i = 0; i < v.depth; ++i) add_block(p, "visual.blocks." + std::to_string(i), v.width, v.depth, rng);
  add_layer_norm(p, "visual.ln_post", v.width);
  p.add("visual.proj", random_normal(v.width, config.embed_dim, 1.0 / std::sqrt(v.width), rng));

  p.add("text.token_embed", random_normal(m.tokenizer.vocab_size(), t.width, 0.02, rng));
  p.add("text.pos", random_normal(t.max_tokens, t.width, 0.01, rng));
  for (int i = 0; i < t.depth; ++i) add_block(p, "text.blocks." + std::to_string(i), t.width, t.depth, rng);
  add_layer_norm(p, "text.ln_final", t.width);
  p.add("text.proj", random_normal(t.width, config.embed_dim, 1.0 / std::sqrt(t.width), rng));
  return m;
}

void Model::save(const std::string& path, const json& extra) const {
  Archive a;
  a.header = {{"format", "retinavl-model"}, {"config", config}};
  json merges = json::array();
  for (const auto& [l, r] : tokenizer.merges()) {
    // Stored as byte arrays so arbitrary bytes survive the JSON round trip.
    merges.push_back({std::vector<unsigned char>(l.begin(), l.end()), std::vector<unsigned char>(r.begin(), r.end())});
  }
  a.header["tokenizer_merges"] = merges;
  if (!extra.is_null()) a.header["extra"] = extra;
  a.params = params;
  write_archive(path, a);
}

Model Model::load(const std::string& path) {
  Archive a = read_archive(path);
  RVL_CHECK(a.header.value("format", "") == "retinavl-model", IoError, path + " is not a model checkpoint");
  Model m;
  m.config = a.header.at("config").get<ModelConfig>();
  m.config.validate();
  std::vector<std::pair<std::string, std::string>> merges;
  for (const auto& pair : a.header.value("tokenizer_merges", json::array())) {
    const auto l = pair.at(0).get<std::vector<unsigned char>>();
    const auto r = pair.at(1).get<std::vector<unsigned char>>();
    merges.emplace_back(std::string(l.begin(), l.end()), std::string(r.begin(), r.end()));
  }
  m.tokenizer = Tokenizer(std::move(merges));
  m.params = std::move(a.params);
  return m;
}

Model with_image_side(const Model& model, int image_side) {
  Model out = model;
  out.config.vision.image_side = image_side;
  out.config.vision.validate();
  const int g_old = model.config.vision.grid(), g_new = out.config.vision.grid();
  if (g_old == g_new) return out;
  const Matrix& pos = model.params["visual.pos"];
  Matrix resized(static_cast<Eigen::Index>(g_new) * g_new + 1, pos.cols());
  resized.row(0) = pos.row(0);
  for (Eigen::Index c = 0; c < pos.cols(); ++c) {
    Plane grid(g_old, g_old);
    for (int r = 0; r < g_old; ++r)
      for (int q = 0; q < g_old; ++q) grid(r, q) = pos(1 + r * g_old + q, c);
    const Plane up = resize_bilinear(grid, g_new, g_new);
    for (int r = 0; r < g_new; ++r)
      for (int q = 0; q < g_new; ++q) resized(1 + r * g_new + q, c) = up(r, q);
  }
  out.params["visual.pos"] = resized;
  return out;
}

Matrix patchify(const Image& image, int patch_side) {
  RVL_CHECK(!image.empty(), ShapeError, "patchify: empty image");
  const auto h = image.height(), w = image.width();
  RVL_CHECK(h % patch_side == 0 && w % patch_side == 0, ShapeError, "patchify: side not divisible by patch");
  const auto gh = h / patch_side, gw = w / patch_side;
  const auto c = image.channels();
  const Eigen::Index ps = patch_side;
  Matrix out(gh * gw, c * ps * ps);
  for (Eigen::Index gy = 0; gy < gh; ++gy)
    for (Eigen::Index gx = 0; gx < gw; ++gx) {
      Eigen::Index col = 0;
      for (Eigen::Index ch = 0; ch < c; ++ch)
        for (Eigen::Index y = 0; y < ps; ++y)
          for (Eigen::Index x = 0; x < ps; ++x) out(gy * gw + gx, col++) = image[ch](gy * ps + y, gx * ps + x);
    }
  return out;
}

VisionOutputs vision_forward(const Bindings& p, const Image& image, const VisionEncoderConfig& config) {
  RVL_CHECK(image.height() == config.image_side && image.width() == config.image_side, ShapeError,
            "encode_image: expected " + std::to_string(config.image_side) + " px square image, got " +
                std::to_string(image.height()) + "x" + std::to_string(image.width()));
  RVL_CHECK(image.channels() == config.channels, ShapeError, "encode_image: channel count mismatch");
  const ad::Var anchor = at(p, "visual.cls");
  ad::Tape& tape = anchor.tape();
  const ad::Var patches = ad::matmul(tape.constant(patchify(image, config.patch_side)), at(p, "visual.patch_embed"));
  ad::Var x = ad::add(ad::concat_rows({anchor, patches}), at(p, "visual.pos"));
  x = layer_norm(p, "visual.ln_pre", x);

  VisionOutputs out;
  const Eigen::Index n_patch = config.patch_count();
  for (int i = 0; i < config.depth; ++i) {
    x = block(p, "visual.blocks." + std::to_string(i), x, config.heads, Matrix());
    for (int tap : config.tap_layers)
      if (tap == i + 1) out.layer_features[tap] = ad::slice_rows(x, 1, n_patch);
  }
  const ad::Var y = layer_norm(p, "visual.ln_post", x);
  out.features = ad::slice_rows(y, 0, 1);
  const ad::Var projected = ad::matmul(y, at(p, "visual.proj"));
  out.embedding = ad::slice_rows(projected, 0, 1);
  out.patch_tokens = ad::slice_rows(projected, 1, n_patch);
  return out;
}

ad::Var text_forward(const Bindings& p, const TokenIds& tokens, const TextEncoderConfig& config) {
  const auto n = static_cast<Eigen::Index>(tokens.size());
  RVL_CHECK(n >= 1, ShapeError, "encode_text: empty token sequence");
  RVL_CHECK(n <= config.max_tokens, ShapeError,
            "encode_text: " + std::to_string(n) + " tokens exceed max_tokens " + std::to_string(config.max_tokens));
  const ad::Var table = at(p, "text.token_embed");
  for (int id : tokens)
    RVL_CHECK(id >= 0 && id < table.rows(), ShapeError, "encode_text: token id " + std::to_string(id) + " outside vocabulary");
  ad::Var x = ad::add(ad::gather_rows(table, tokens), ad::slice_rows(at(p, "text.pos"), 0, n));
  const Matrix mask = causal_mask(n);
  for (int i = 0; i < config.depth; ++i) x = block(p, "text.blocks." + std::to_string(i), x, config.heads, mask);
  x = layer_norm(p, "text.ln_final", ad::slice_rows(x, n - 1, 1));
  return ad::matmul(x, at(p, "text.proj"));
}

ImageEncoding encode_image(const Model& model, const Image& image) {
  ad::Tape tape;
  const Bindings p = tape.bind(model.params, "", true);
  const VisionOutputs o = vision_forward(p, image, model.config.vision);
  ImageEncoding e;
  e.embedding = o.embedding.value().row(0).transpose().normalized();
  e.features = o.features.value().row(0).transpose();
  e.patch_grid = o.patch_tokens.value();
  for (const auto& [tap, v] : o.layer_features) e.layer_features.emplace(tap, v.value());
  RVL_CHECK(e.embedding.allFinite(), NumericError, "encode_image: non-finite embedding");
  return e;
}

Vector encode_text(const Model& model, const TokenIds& tokens) {
  ad::Tape tape;
  const Bindings p = tape.bind(model.params, "", true);
  const Vector v = text_forward(p, tokens, model.config.text).value().row(0).transpose();
  RVL_CHECK(v.allFinite() && v.norm() > 0, NumericError, "encode_text: degenerate embedding");
  return v.normalized();
}

Vector encode_text(const Model& model, const std::string& text) {
  return encode_text(model, model.tokenizer.tokenize(text, model.config.text.max_tokens));
}

void write_embeddings_jsonl(const std::string& path, const std::vector<std::string>& ids, const Matrix& rows) {
  RVL_CHECK(static_cast<Eigen::Index>(ids.size()) == rows.rows(), ShapeError, "embedding export: id count differs from rows");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Vector r = rows.row(static_cast<Eigen::Index>(i)).transpose();
    json line{{"id", ids[i]}, {"embedding", std::vector<double>(r.data(), r.data() + r.size())}};
    out << line.dump() << '\n';
  }
}

}  // namespace retinavl::encoders
