// SPDX-License-Identifier: Apache-2.0
#include "fedlab/model.hpp"

#include "fedlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace fedlab {

namespace {

constexpr double kNormEps = 1e-6;

Eigen::RowVectorXd row_of(const Matrix& bias) { return bias.col(0).transpose(); }

void check_batch(const ParameterSet& params, const Batch& batch) {
  const auto& cfg = params.config;
  if (batch.token_ids.rows() == 0) throw DataError("empty batch");
  if (batch.token_ids.cols() != cfg.seq_len)
    throw ConfigError("batch seq_len does not match model config");
  if (static_cast<Index>(batch.labels.size()) != batch.token_ids.rows())
    throw DataError("batch label count mismatch");
  for (Index n = 0; n < batch.token_ids.rows(); ++n) {
    for (Index l = 0; l < batch.token_ids.cols(); ++l) {
      const int id = batch.token_ids(n, l);
      if (id < 0 || id >= cfg.vocab_size)
        throw DataError("token id out of range: " + std::to_string(id));
    }
    const int label = batch.labels[static_cast<std::size_t>(n)];
    if (label < 0 || label >= cfg.num_classes)
      throw DataError("label out of range: " + std::to_string(label));
  }
}

const Matrix& effective(const ParameterSet& params, const AdapterSet& adapters,
                        ForwardCache& cache, const std::string& name) {
  const auto it = adapters.lora.find(name);
  if (it == adapters.lora.end()) return params.at(name);
  const auto cached = cache.eff.find(name);
  if (cached != cache.eff.end()) return cached->second;
  return cache.eff
      .emplace(name, effective_weight(params.at(name), it->second))
      .first->second;
}

Matrix adapter_site_forward(const BottleneckSite& site, const Matrix& in,
                            AdapterSiteCache& cache) {
  cache.active = true;
  cache.input = in;
  cache.hidden_pre = (in * site.w_down).rowwise() + row_of(site.b_down);
  cache.hidden = cache.hidden_pre.cwiseMax(0.0);
  return in + ((cache.hidden * site.w_up).rowwise() + row_of(site.b_up));
}

void rms_norm(const Matrix& in, const Matrix& gain, Matrix& out,
              Vector& inv_rms) {
  const auto d = static_cast<double>(in.cols());
  out.resize(in.rows(), in.cols());
  inv_rms.resize(in.rows());
  const Eigen::RowVectorXd g = row_of(gain);
  for (Index i = 0; i < in.rows(); ++i) {
    const double inv =
        1.0 / std::sqrt(in.row(i).squaredNorm() / d + kNormEps);
    inv_rms[i] = inv;
    out.row(i) = (in.row(i) * inv).cwiseProduct(g);
  }
}

void softmax_rows(Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

}  // namespace

Batch batch_from(const Dataset& dataset, const std::vector<Index>& rows) {
  Batch b;
  b.token_ids = IntMatrix(static_cast<Index>(rows.size()), dataset.seq_len());
  b.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= dataset.size())
      throw DataError("batch_from: index out of range");
    b.token_ids.row(static_cast<Index>(i)) = dataset.tokens.row(rows[i]);
    b.labels[i] = dataset.labels[static_cast<std::size_t>(rows[i])];
  }
  return b;
}

Matrix forward(const ParameterSet& params, const AdapterSet& adapters,
               const Batch& batch, ForwardCache* cache) {
  check_batch(params, batch);
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.eff.clear();
  c.blocks.assign(static_cast<std::size_t>(params.config.num_blocks), {});

  const auto& cfg = params.config;
  const Index bsz = batch.token_ids.rows();
  const Index len = cfg.seq_len;
  const Index d = cfg.embed_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  const Matrix& tok = params.at("token_embedding");
  const Matrix& pos = params.at("pos_embedding");
  c.embed.resize(bsz * len, d);
  for (Index n = 0; n < bsz; ++n)
    for (Index l = 0; l < len; ++l)
      c.embed.row(n * len + l) = tok.row(batch.token_ids(n, l)) + pos.row(l);

  Matrix x = c.embed;
  for (int blk = 0; blk < cfg.num_blocks; ++blk) {
    BlockCache& bc = c.blocks[static_cast<std::size_t>(blk)];
    const std::string p = block_prefix(blk);
    bc.e_in = x;

    bc.q = (x * effective(params, adapters, c, p + "w_q")).rowwise() +
           row_of(params.at(p + "b_q"));
    bc.k = (x * effective(params, adapters, c, p + "w_k")).rowwise() +
           row_of(params.at(p + "b_k"));
    bc.v = (x * effective(params, adapters, c, p + "w_v")).rowwise() +
           row_of(params.at(p + "b_v"));

    bc.attn_p.resize(bsz * len, len);
    bc.attn_o.resize(bsz * len, d);
    for (Index n = 0; n < bsz; ++n) {
      const auto qn = bc.q.middleRows(n * len, len);
      const auto kn = bc.k.middleRows(n * len, len);
      const auto vn = bc.v.middleRows(n * len, len);
      Matrix s = qn * kn.transpose() * scale;
      softmax_rows(s);
      bc.attn_p.middleRows(n * len, len) = s;
      bc.attn_o.middleRows(n * len, len) = s * vn;
    }

    bc.proj = (bc.attn_o * effective(params, adapters, c, p + "w_o")).rowwise() +
              row_of(params.at(p + "b_o"));
    const auto site1 = adapters.bottleneck.find(p + "adapter_attn");
    if (site1 != adapters.bottleneck.end())
      bc.proj = adapter_site_forward(site1->second, bc.proj, bc.ad_attn);

    bc.norm1_in = bc.e_in + bc.proj;
    rms_norm(bc.norm1_in, params.at(p + "norm1_gain"), bc.x1, bc.inv_rms1);

    bc.ff_pre = (bc.x1 * effective(params, adapters, c, p + "w_ff1")).rowwise() +
                row_of(params.at(p + "b_ff1"));
    bc.ff_h = bc.ff_pre.cwiseMax(0.0);
    bc.ff_out = (bc.ff_h * effective(params, adapters, c, p + "w_ff2")).rowwise() +
                row_of(params.at(p + "b_ff2"));
    const auto site2 = adapters.bottleneck.find(p + "adapter_ffn");
    if (site2 != adapters.bottleneck.end())
      bc.ff_out = adapter_site_forward(site2->second, bc.ff_out, bc.ad_ffn);

    bc.norm2_in = bc.x1 + bc.ff_out;
    rms_norm(bc.norm2_in, params.at(p + "norm2_gain"), bc.x2, bc.inv_rms2);
    x = bc.x2;
  }

  c.pooled.resize(bsz, d);
  for (Index n = 0; n < bsz; ++n)
    c.pooled.row(n) =
        x.middleRows(n * len, len).colwise().mean();

  c.logits = (c.pooled * effective(params, adapters, c, "w_cls")).rowwise() +
             row_of(params.at("b_cls"));
  if (!c.logits.allFinite()) throw NumericError("forward: non-finite logits");
  return c.logits;
}

namespace {

// Collects gradients, routing adapted matrices to their low-rank pairs and
// skipping anything frozen.
struct GradSink {
  const ParameterSet& params;
  const AdapterSet& adapters;
  std::set<std::string> base;
  TensorMap grads;

  GradSink(const ParameterSet& p, const AdapterSet& a) : params(p), adapters(a) {
    base.insert(a.trainable_base.begin(), a.trainable_base.end());
  }

  bool needs_matrix(const std::string& name) const {
    return base.count(name) != 0 || adapters.lora.count(name) != 0;
  }
  bool needs_base(const std::string& name) const { return base.count(name) != 0; }

  void add(const std::string& key, const Matrix& g) {
    const auto it = grads.find(key);
    if (it == grads.end())
      grads.emplace(key, g);
    else
      it->second += g;
  }

  // g is the gradient of the loss w.r.t. the effective weight.
  void add_matrix(const std::string& name, const Matrix& g) {
    const auto it = adapters.lora.find(name);
    if (it != adapters.lora.end()) {
      const LoraPair& pair = it->second;
      const double s = pair.beta / pair.r;
      add(name + ".lora_a", s * (pair.b.transpose() * g));
      add(name + ".lora_b", s * (g * pair.a.transpose()));
      return;
    }
    if (base.count(name)) add(name, g);
  }

  void add_bias(const std::string& name, const Matrix& dy) {
    if (!base.count(name)) return;
    add(name, dy.colwise().sum().transpose());
  }
};

Matrix norm_backward(const Matrix& in, const Vector& inv_rms,
                     const Matrix& gain, const Matrix& dy,
                     GradSink& sink, const std::string& gain_name) {
  const auto d = static_cast<double>(in.cols());
  const Eigen::RowVectorXd g = row_of(gain);
  Matrix dx(in.rows(), in.cols());
  Matrix dgain = Matrix::Zero(in.cols(), 1);
  const bool want_gain = sink.needs_base(gain_name);
  for (Index i = 0; i < in.rows(); ++i) {
    const double inv = inv_rms[i];
    const Eigen::RowVectorXd t = dy.row(i).cwiseProduct(g);
    const double dot = t.dot(in.row(i));
    dx.row(i) = t * inv - in.row(i) * (dot * inv * inv * inv / d);
    if (want_gain)
      dgain.col(0) += (in.row(i) * inv).cwiseProduct(dy.row(i)).transpose();
  }
  if (want_gain) sink.add(gain_name, dgain);
  return dx;
}

// d_out -> d_in for a bottleneck site, accumulating its weight grads.
Matrix adapter_site_backward(const BottleneckSite& site,
                             const AdapterSiteCache& cache, const Matrix& d_out,
                             GradSink& sink, const std::string& site_name) {
  sink.add(site_name + ".b_up", d_out.colwise().sum().transpose());
  sink.add(site_name + ".w_up", cache.hidden.transpose() * d_out);
  Matrix dh = d_out * site.w_up.transpose();
  Matrix dh_pre =
      (cache.hidden_pre.array() > 0.0).cast<double>().matrix().cwiseProduct(dh);
  sink.add(site_name + ".b_down", dh_pre.colwise().sum().transpose());
  sink.add(site_name + ".w_down", cache.input.transpose() * dh_pre);
  return d_out + dh_pre * site.w_down.transpose();
}

}  // namespace

std::pair<double, TensorMap> loss_and_grads(const ParameterSet& params,
                                            const AdapterSet& adapters,
                                            const Batch& batch) {
  ForwardCache c;
  forward(params, adapters, batch, &c);

  const auto& cfg = params.config;
  const Index bsz = batch.token_ids.rows();
  const Index len = cfg.seq_len;
  const Index d = cfg.embed_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Matrix probs = c.logits;
  softmax_rows(probs);
  double loss = 0.0;
  for (Index n = 0; n < bsz; ++n)
    loss -= std::log(probs(n, batch.labels[static_cast<std::size_t>(n)]));
  loss /= static_cast<double>(bsz);

  GradSink sink(params, adapters);

  Matrix dlogits = probs;
  for (Index n = 0; n < bsz; ++n)
    dlogits(n, batch.labels[static_cast<std::size_t>(n)]) -= 1.0;
  dlogits /= static_cast<double>(bsz);

  if (sink.needs_matrix("w_cls"))
    sink.add_matrix("w_cls", c.pooled.transpose() * dlogits);
  sink.add_bias("b_cls", dlogits);
  const Matrix& w_cls_eff =
      c.eff.count("w_cls") ? c.eff.at("w_cls") : params.at("w_cls");
  const Matrix dpooled = dlogits * w_cls_eff.transpose();

  Matrix dx(bsz * len, d);
  for (Index n = 0; n < bsz; ++n)
    for (Index l = 0; l < len; ++l)
      dx.row(n * len + l) = dpooled.row(n) / static_cast<double>(len);

  for (int blk = cfg.num_blocks - 1; blk >= 0; --blk) {
    const BlockCache& bc = c.blocks[static_cast<std::size_t>(blk)];
    const std::string p = block_prefix(blk);
    const auto eff_of = [&](const char* which) -> const Matrix& {
      const std::string name = p + which;
      const auto it = c.eff.find(name);
      return it != c.eff.end() ? it->second : params.at(name);
    };

    // norm after FFN
    Matrix dz2 = norm_backward(bc.norm2_in, bc.inv_rms2,
                               params.at(p + "norm2_gain"), dx, sink,
                               p + "norm2_gain");
    Matrix dx1 = dz2;  // residual branch
    Matrix dff_out = dz2;
    if (bc.ad_ffn.active)
      dff_out = adapter_site_backward(
          adapters.bottleneck.at(p + "adapter_ffn"), bc.ad_ffn, dff_out, sink,
          p + "adapter_ffn");

    if (sink.needs_matrix(p + "w_ff2"))
      sink.add_matrix(p + "w_ff2", bc.ff_h.transpose() * dff_out);
    sink.add_bias(p + "b_ff2", dff_out);
    Matrix dff_h = dff_out * eff_of("w_ff2").transpose();
    Matrix dff_pre =
        (bc.ff_pre.array() > 0.0).cast<double>().matrix().cwiseProduct(dff_h);
    if (sink.needs_matrix(p + "w_ff1"))
      sink.add_matrix(p + "w_ff1", bc.x1.transpose() * dff_pre);
    sink.add_bias(p + "b_ff1", dff_pre);
    dx1 += dff_pre * eff_of("w_ff1").transpose();

    // norm after attention
    Matrix dz1 = norm_backward(bc.norm1_in, bc.inv_rms1,
                               params.at(p + "norm1_gain"), dx1, sink,
                               p + "norm1_gain");
    Matrix de = dz1;  // residual branch
    Matrix dproj = dz1;
    if (bc.ad_attn.active)
      dproj = adapter_site_backward(
          adapters.bottleneck.at(p + "adapter_attn"), bc.ad_attn, dproj, sink,
          p + "adapter_attn");

    if (sink.needs_matrix(p + "w_o"))
      sink.add_matrix(p + "w_o", bc.attn_o.transpose() * dproj);
    sink.add_bias(p + "b_o", dproj);
    Matrix dattn_o = dproj * eff_of("w_o").transpose();

    Matrix dq(bsz * len, d), dk(bsz * len, d), dv(bsz * len, d);
    for (Index n = 0; n < bsz; ++n) {
      const auto pn = bc.attn_p.middleRows(n * len, len);
      const auto qn = bc.q.middleRows(n * len, len);
      const auto kn = bc.k.middleRows(n * len, len);
      const auto vn = bc.v.middleRows(n * len, len);
      const auto don = dattn_o.middleRows(n * len, len);
      dv.middleRows(n * len, len) = pn.transpose() * don;
      Matrix dp = don * vn.transpose();
      // softmax jacobian per row
      Matrix ds(len, len);
      for (Index i = 0; i < len; ++i) {
        const double dot = dp.row(i).dot(pn.row(i));
        ds.row(i) = pn.row(i).cwiseProduct(
            dp.row(i) - Eigen::RowVectorXd::Constant(len, dot));
      }
      dq.middleRows(n * len, len) = ds * kn * scale;
      dk.middleRows(n * len, len) = ds.transpose() * qn * scale;
    }

    if (sink.needs_matrix(p + "w_q"))
      sink.add_matrix(p + "w_q", bc.e_in.transpose() * dq);
    sink.add_bias(p + "b_q", dq);
    if (sink.needs_matrix(p + "w_k"))
      sink.add_matrix(p + "w_k", bc.e_in.transpose() * dk);
    sink.add_bias(p + "b_k", dk);
    if (sink.needs_matrix(p + "w_v"))
      sink.add_matrix(p + "w_v", bc.e_in.transpose() * dv);
    sink.add_bias(p + "b_v", dv);

    de += dq * eff_of("w_q").transpose();
    de += dk * eff_of("w_k").transpose();
    de += dv * eff_of("w_v").transpose();
    dx = std::move(de);
  }

  if (sink.needs_base("token_embedding")) {
    Matrix g = Matrix::Zero(cfg.vocab_size, d);
    for (Index n = 0; n < bsz; ++n)
      for (Index l = 0; l < len; ++l)
        g.row(batch.token_ids(n, l)) += dx.row(n * len + l);
    sink.add("token_embedding", g);
  }
  if (sink.needs_base("pos_embedding")) {
    Matrix g = Matrix::Zero(len, d);
    for (Index n = 0; n < bsz; ++n)
      for (Index l = 0; l < len; ++l) g.row(l) += dx.row(n * len + l);
    sink.add("pos_embedding", g);
  }

  // Trainable tensors the batch never reached still get explicit zeros.
  const TensorMap reference = collect_trainables(params, adapters);
  for (const auto& [name, t] : reference)
    if (!sink.grads.count(name))
      sink.grads.emplace(name, Matrix::Zero(t.rows(), t.cols()));

  for (const auto& [name, g] : sink.grads)
    if (!g.allFinite())
      throw NumericError("non-finite gradient for " + name);

  return {loss, std::move(sink.grads)};
}

namespace {

Matrix& locate_trainable(ParameterSet& params, AdapterSet& adapters,
                         const std::string& key) {
  const auto ends_with = [&](const char* suffix) {
    const std::string s = suffix;
    return key.size() > s.size() &&
           key.compare(key.size() - s.size(), s.size(), s) == 0;
  };
  const auto strip = [&](const char* suffix) {
    return key.substr(0, key.size() - std::string(suffix).size());
  };
  if (ends_with(".lora_a")) {
    const auto it = adapters.lora.find(strip(".lora_a"));
    if (it != adapters.lora.end()) return it->second.a;
  } else if (ends_with(".lora_b")) {
    const auto it = adapters.lora.find(strip(".lora_b"));
    if (it != adapters.lora.end()) return it->second.b;
  } else if (ends_with(".w_down") || ends_with(".b_down") ||
             ends_with(".w_up") || ends_with(".b_up")) {
    const auto dot = key.rfind('.');
    const auto it = adapters.bottleneck.find(key.substr(0, dot));
    if (it != adapters.bottleneck.end()) {
      const std::string field = key.substr(dot + 1);
      if (field == "w_down") return it->second.w_down;
      if (field == "b_down") return it->second.b_down;
      if (field == "w_up") return it->second.w_up;
      return it->second.b_up;
    }
  }
  if (std::find(adapters.trainable_base.begin(), adapters.trainable_base.end(),
                key) == adapters.trainable_base.end())
    throw ConfigError("not a trainable tensor: " + key);
  return params.at(key);
}

}  // namespace

void sgd_step(ParameterSet& params, AdapterSet& adapters,
              const TensorMap& grads, double lr) {
  if (lr < 0.0) throw ConfigError("sgd_step: negative learning rate");
  for (const auto& [key, g] : grads) {
    Matrix& w = locate_trainable(params, adapters, key);
    if (w.rows() != g.rows() || w.cols() != g.cols())
      throw ConfigError("sgd_step: shape mismatch for " + key);
    w -= lr * g;
  }
}

void Optimizer::step(ParameterSet& params, AdapterSet& adapters,
                     const TensorMap& grads) {
  if (config_.kind == OptimizerConfig::Kind::kSgd) {
    sgd_step(params, adapters, grads, config_.lr);
    return;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [key, g] : grads) {
    Matrix& w = locate_trainable(params, adapters, key);
    if (w.rows() != g.rows() || w.cols() != g.cols())
      throw ConfigError("optimizer: shape mismatch for " + key);
    Matrix& m = m_.try_emplace(key, Matrix::Zero(g.rows(), g.cols()))
                    .first->second;
    Matrix& v = v_.try_emplace(key, Matrix::Zero(g.rows(), g.cols()))
                    .first->second;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const Matrix update =
        (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + config_.eps)
                                    .matrix()) +
        config_.weight_decay * w;
    w -= config_.lr * update;
  }
}

EvalMetrics evaluate(const ParameterSet& params, const AdapterSet& adapters,
                     const Dataset& dataset, Index batch_size) {
  if (dataset.size() == 0) throw DataError("evaluate: empty dataset");
  const int classes = params.config.num_classes;
  std::vector<long long> tp(static_cast<std::size_t>(classes), 0);
  std::vector<long long> fp(static_cast<std::size_t>(classes), 0);
  std::vector<long long> fn(static_cast<std::size_t>(classes), 0);
  std::vector<long long> support(static_cast<std::size_t>(classes), 0);
  long long correct = 0;
  double loss_sum = 0.0;

  for (Index start = 0; start < dataset.size(); start += batch_size) {
    const Index count = std::min(batch_size, dataset.size() - start);
    std::vector<Index> rows(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) rows[static_cast<std::size_t>(i)] = start + i;
    const Batch batch = batch_from(dataset, rows);
    Matrix logits = forward(params, adapters, batch);
    Matrix probs = logits;
    softmax_rows(probs);
    for (Index n = 0; n < count; ++n) {
      Index pred = 0;
      logits.row(n).maxCoeff(&pred);
      const int truth = batch.labels[static_cast<std::size_t>(n)];
      loss_sum -= std::log(probs(n, truth));
      ++support[static_cast<std::size_t>(truth)];
      if (pred == truth) {
        ++correct;
        ++tp[static_cast<std::size_t>(truth)];
      } else {
        ++fn[static_cast<std::size_t>(truth)];
        ++fp[static_cast<std::size_t>(pred)];
      }
    }
  }

  EvalMetrics out;
  const auto total = static_cast<double>(dataset.size());
  out.accuracy = static_cast<double>(correct) / total;
  out.loss = loss_sum / total;
  double f1_sum = 0.0;
  int f1_classes = 0;
  for (int cidx = 0; cidx < classes; ++cidx) {
    const auto c = static_cast<std::size_t>(cidx);
    if (support[c] == 0) continue;  // class absent from ground truth
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    ++f1_classes;
  }
  out.macro_f1 = f1_classes > 0 ? f1_sum / f1_classes : 0.0;
  return out;
}

double gradient_check(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = Rng::derive(seed, "gradcheck");
  Batch batch;
  const Index bsz = 3;
  batch.token_ids = IntMatrix(bsz, config.seq_len);
  batch.labels.resize(static_cast<std::size_t>(bsz));
  for (Index n = 0; n < bsz; ++n) {
    for (Index l = 0; l < config.seq_len; ++l)
      batch.token_ids(n, l) = 1 + static_cast<int>(rng.next_below(
                                      static_cast<std::uint64_t>(
                                          config.vocab_size - 1)));
    batch.labels[static_cast<std::size_t>(n)] = static_cast<int>(
        rng.next_below(static_cast<std::uint64_t>(config.num_classes)));
  }

  const int max_rank = std::min(config.embed_dim, 2);
  const std::vector<AdapterMode> modes = {
      AdapterMode::full_ft(), AdapterMode::bias_only(),
      AdapterMode::bottleneck(3), AdapterMode::lora(1, 1.0),
      AdapterMode::federa(max_rank, 3.0)};

  constexpr double kEps = 1e-5;
  double worst = 0.0;
  for (const auto& mode : modes) {
    ParameterSet params = init_parameters(config, seed);
    AdapterSet adapters =
        attach_adapters(params, mode, default_targets(config), seed);
    const auto [loss, grads] = loss_and_grads(params, adapters, batch);
    (void)loss;
    for (const auto& [key, g] : grads) {
      Matrix& w = locate_trainable(params, adapters, key);
      for (Index i = 0; i < w.rows(); ++i) {
        for (Index j = 0; j < w.cols(); ++j) {
          const double keep = w(i, j);
          w(i, j) = keep + kEps;
          ForwardCache scratch;
          Matrix logits = forward(params, adapters, batch, &scratch);
          softmax_rows(logits);
          double lp = 0.0;
          for (Index n = 0; n < bsz; ++n)
            lp -= std::log(logits(n, batch.labels[static_cast<std::size_t>(n)]));
          lp /= static_cast<double>(bsz);
          w(i, j) = keep - kEps;
          logits = forward(params, adapters, batch, &scratch);
          softmax_rows(logits);
          double lm = 0.0;
          for (Index n = 0; n < bsz; ++n)
            lm -= std::log(logits(n, batch.labels[static_cast<std::size_t>(n)]));
          lm /= static_cast<double>(bsz);
          w(i, j) = keep;
          const double numeric = (lp - lm) / (2.0 * kEps);
          // denominator floored so FD roundoff on near-zero gradients does
          // not register as error
          const double rel = std::abs(g(i, j) - numeric) /
                             std::max({std::abs(g(i, j)), std::abs(numeric),
                                       1e-5});
          worst = std::max(worst, rel);
        }
      }
    }
  }
  return worst;
}

}  // namespace fedlab
