// SPDX-License-Identifier: Apache-2.0

#include "guiderag/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "binary_io.hpp"

namespace guiderag {

namespace {

struct Encoding {
  std::vector<double> unit;  // zero when undefined
  double norm = 0.0;         // |mean| before normalization
};

Encoding encode_mean(const EmbeddingTable& table, std::span<const TokenId> tokens) {
  Encoding enc;
  enc.unit.assign(table.dim(), 0.0);
  if (tokens.empty()) return enc;
  for (TokenId t : tokens) {
    auto r = table.row(t);
    for (std::size_t k = 0; k < r.size(); ++k) enc.unit[k] += r[k];
  }
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  double n2 = 0.0;
  for (double& v : enc.unit) {
    v *= inv_n;
    n2 += v * v;
  }
  enc.norm = std::sqrt(n2);
  if (enc.norm < 1e-300) {
    std::fill(enc.unit.begin(), enc.unit.end(), 0.0);
    enc.norm = 0.0;
    return enc;
  }
  for (double& v : enc.unit) v /= enc.norm;
  return enc;
}

/// out[v] = <E_v, x> for every row v.
void table_times(const EmbeddingTable& table, std::span<const double> x, std::vector<double>& out) {
  const std::size_t vocab = table.vocab_size();
  out.resize(vocab);
  for (std::size_t v = 0; v < vocab; ++v) out[v] = dot(table.row(static_cast<TokenId>(v)), x);
}

/// out = E^T weights.
void table_transpose_times(const EmbeddingTable& table, std::span<const double> weights,
                           std::vector<double>& out) {
  const std::size_t dim = table.dim();
  out.assign(dim, 0.0);
  for (std::size_t v = 0; v < weights.size(); ++v) {
    const double w = weights[v];
    if (w == 0.0) continue;
    auto r = table.row(static_cast<TokenId>(v));
    for (std::size_t k = 0; k < dim; ++k) out[k] += w * r[k];
  }
}

/// Pulls a gradient on enc(tokens) back to the token rows through mean and normalization.
void backprop_encoding(const Encoding& enc, std::span<const TokenId> tokens,
                       std::span<const double> grad_unit, TableGrad& grad) {
  if (tokens.empty() || enc.norm == 0.0) return;
  const double proj = dot(enc.unit, grad_unit);
  const double scale = 1.0 / (enc.norm * static_cast<double>(tokens.size()));
  const std::size_t dim = enc.unit.size();
  std::vector<double> du(dim);
  for (std::size_t k = 0; k < dim; ++k) du[k] = (grad_unit[k] - enc.unit[k] * proj) * scale;
  for (TokenId t : tokens) {
    auto g = grad.row(t);
    for (std::size_t k = 0; k < dim; ++k) g[k] += du[k];
  }
}

double log_sum_exp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ") + what);
}

}  // namespace

void GeneratorGrad::zero() {
  table.zero();
  std::fill(bias.begin(), bias.end(), 0.0);
  lambda_ctx = lambda_psg = lambda_prev = 0.0;
}

void GeneratorGrad::add(const GeneratorGrad& other, double scale) {
  table.add(other.table, scale);
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += scale * other.bias[i];
  lambda_ctx += scale * other.lambda_ctx;
  lambda_psg += scale * other.lambda_psg;
  lambda_prev += scale * other.lambda_prev;
}

GeneratorModel GeneratorModel::init(std::size_t vocab_size, std::size_t dim, std::uint64_t seed,
                                    double lambda_ctx, double lambda_psg, double lambda_prev) {
  GeneratorModel m;
  m.table = EmbeddingTable::init(vocab_size, dim, seed);
  m.bias.assign(vocab_size, 0.0);
  m.lambda_ctx = lambda_ctx;
  m.lambda_psg = lambda_psg;
  m.lambda_prev = lambda_prev;
  return m;
}

void GeneratorModel::apply_gradients(const GeneratorGrad& grad, double learning_rate) {
  for (double v : grad.bias) check_finite(v, "generator bias gradient");
  check_finite(grad.lambda_ctx, "generator lambda gradient");
  check_finite(grad.lambda_psg, "generator lambda gradient");
  check_finite(grad.lambda_prev, "generator lambda gradient");
  table.grad().add(grad.table);
  table.apply_gradients(learning_rate);
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += learning_rate * grad.bias[i];
  lambda_ctx += learning_rate * grad.lambda_ctx;
  lambda_psg += learning_rate * grad.lambda_psg;
  lambda_prev += learning_rate * grad.lambda_prev;
}

void GeneratorModel::write(std::ostream& out) const {
  detail::write_header(out, "GRAGGEN");
  detail::write_pod(out, lambda_ctx);
  detail::write_pod(out, lambda_psg);
  detail::write_pod(out, lambda_prev);
  detail::write_doubles(out, bias);
  table.write(out);
}

GeneratorModel GeneratorModel::read(std::istream& in) {
  detail::read_header(in, "GRAGGEN");
  GeneratorModel m;
  m.lambda_ctx = detail::read_pod<double>(in);
  m.lambda_psg = detail::read_pod<double>(in);
  m.lambda_prev = detail::read_pod<double>(in);
  m.bias = detail::read_doubles(in);
  m.table = EmbeddingTable::read(in);
  if (m.bias.size() != m.table.vocab_size()) {
    throw InvalidArgument("corrupt generator checkpoint: bias/table size mismatch");
  }
  return m;
}

std::vector<double> mean_encoding(const EmbeddingTable& table, std::span<const TokenId> tokens) {
  table.check_ids(tokens);
  return encode_mean(table, tokens).unit;
}

StepDistribution step_logits(const GeneratorModel& model, std::span<const TokenId> context,
                             std::span<const TokenId> passage, TokenId prev_token) {
  if (passage.empty()) throw InvalidArgument("generator: empty passage");
  const auto& table = model.table;
  table.check_ids(context);
  table.check_ids(passage);
  table.check_ids(std::span<const TokenId>(&prev_token, 1));
  const auto cx = encode_mean(table, context);
  const auto cz = encode_mean(table, passage);
  const auto prev = table.row(prev_token);
  const std::size_t vocab = table.vocab_size();
  StepDistribution d;
  d.logits.resize(vocab);
  for (std::size_t v = 0; v < vocab; ++v) {
    const auto e = table.row(static_cast<TokenId>(v));
    d.logits[v] = model.bias[v] + model.lambda_ctx * dot(e, cx.unit) +
                  model.lambda_psg * dot(e, cz.unit) + model.lambda_prev * dot(e, prev);
  }
  const double lse = log_sum_exp(d.logits);
  d.probs.resize(vocab);
  for (std::size_t v = 0; v < vocab; ++v) d.probs[v] = std::exp(d.logits[v] - lse);
  return d;
}

TargetScorer::TargetScorer(const GeneratorModel& model, std::span<const TokenId> context,
                           std::span<const TokenId> target)
    : model_(model), context_(context.begin(), context.end()) {
  const auto& table = model.table;
  table.check_ids(context);
  table.check_ids(target);
  outputs_.assign(target.begin(), target.end());
  outputs_.push_back(Vocabulary::kEos);
  prevs_.push_back(Vocabulary::kBos);
  prevs_.insert(prevs_.end(), target.begin(), target.end());

  const auto cx = encode_mean(table, context_);
  ctx_enc_ = cx.unit;
  ctx_norm_ = cx.norm;
  table_times(table, ctx_enc_, ctx_logits_);

  const std::size_t vocab = table.vocab_size();
  prev_logits_.resize(prevs_.size() * vocab);
  std::vector<double> tmp;
  for (std::size_t t = 0; t < prevs_.size(); ++t) {
    table_times(table, table.row(prevs_[t]), tmp);
    std::copy(tmp.begin(), tmp.end(), prev_logits_.begin() + static_cast<std::ptrdiff_t>(t * vocab));
  }
  delta_sum_.assign(vocab, 0.0);
  delta_steps_.assign(prevs_.size() * vocab, 0.0);
}

const TargetScorer::Forward& TargetScorer::forward(std::span<const TokenId> passage) const {
  for (const auto& f : cache_) {
    if (std::equal(f.passage.begin(), f.passage.end(), passage.begin(), passage.end())) return f;
  }
  const auto& table = model_.table;
  const std::size_t vocab = table.vocab_size();
  Forward f;
  f.passage.assign(passage.begin(), passage.end());
  const auto cz = encode_mean(table, passage);
  table_times(table, cz.unit, f.psg_logits);

  f.step_probs.resize(outputs_.size() * vocab);
  for (std::size_t t = 0; t < outputs_.size(); ++t) {
    const double* prev = prev_logits_.data() + t * vocab;
    double* logits = f.step_probs.data() + t * vocab;
    for (std::size_t v = 0; v < vocab; ++v) {
      logits[v] = model_.bias[v] + model_.lambda_ctx * ctx_logits_[v] +
                  model_.lambda_psg * f.psg_logits[v] + model_.lambda_prev * prev[v];
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < vocab; ++v) mx = std::max(mx, logits[v]);
    const double target_logit = logits[static_cast<std::size_t>(outputs_[t])];
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      logits[v] = std::exp(logits[v] - mx);
      z += logits[v];
    }
    const double inv_z = 1.0 / z;
    for (std::size_t v = 0; v < vocab; ++v) logits[v] *= inv_z;
    f.log_likelihood += target_logit - mx - std::log(z);
  }
  cache_.push_back(std::move(f));
  return cache_.back();
}

double TargetScorer::log_likelihood(std::span<const TokenId> passage) const {
  if (passage.empty()) throw InvalidArgument("generator: empty passage");
  model_.table.check_ids(passage);
  return forward(passage).log_likelihood;
}

double TargetScorer::accumulate_gradient(std::span<const TokenId> passage, double weight,
                                         GeneratorGrad& grad) {
  if (passage.empty()) throw InvalidArgument("generator: empty passage");
  const auto& table = model_.table;
  table.check_ids(passage);
  const std::size_t vocab = table.vocab_size();
  const std::size_t dim = table.dim();

  const Forward& fw = forward(passage);
  const double ll = fw.log_likelihood;
  const std::vector<double>& probs = fw.step_probs;
  check_finite(ll, "generator log-likelihood");
  if (weight == 0.0) return ll;

  // delta_t = onehot(y_t) - p_t, weighted.
  std::vector<double> delta(vocab, 0.0);
  for (std::size_t t = 0; t < outputs_.size(); ++t) {
    const double* p = probs.data() + t * vocab;
    double* ds = delta_steps_.data() + t * vocab;
    for (std::size_t v = 0; v < vocab; ++v) {
      const double d = weight * ((static_cast<TokenId>(v) == outputs_[t] ? 1.0 : 0.0) - p[v]);
      ds[v] += d;
      delta[v] += d;
    }
  }
  for (std::size_t v = 0; v < vocab; ++v) delta_sum_[v] += delta[v];
  pending_ = true;

  // Passage-specific terms.
  const auto cz = encode_mean(table, passage);
  grad.lambda_psg += dot(delta, fw.psg_logits);
  const double lp = model_.lambda_psg;
  for (std::size_t v = 0; v < vocab; ++v) {
    if (delta[v] == 0.0) continue;
    auto g = grad.table.row(static_cast<TokenId>(v));
    const double s = lp * delta[v];
    for (std::size_t k = 0; k < dim; ++k) g[k] += s * cz.unit[k];
  }
  std::vector<double> grad_cz;
  table_transpose_times(table, delta, grad_cz);
  for (double& v : grad_cz) v *= lp;
  backprop_encoding(cz, passage, grad_cz, grad.table);
  return ll;
}

void TargetScorer::finalize(GeneratorGrad& grad) {
  if (!pending_) return;
  const auto& table = model_.table;
  const std::size_t vocab = table.vocab_size();
  const std::size_t dim = table.dim();
  const double lc = model_.lambda_ctx;
  const double lr = model_.lambda_prev;

  for (std::size_t v = 0; v < vocab; ++v) grad.bias[v] += delta_sum_[v];
  grad.lambda_ctx += dot(delta_sum_, ctx_logits_);
  for (std::size_t v = 0; v < vocab; ++v) {
    if (delta_sum_[v] == 0.0) continue;
    auto g = grad.table.row(static_cast<TokenId>(v));
    const double s = lc * delta_sum_[v];
    for (std::size_t k = 0; k < dim; ++k) g[k] += s * ctx_enc_[k];
  }
  std::vector<double> grad_cx;
  table_transpose_times(table, delta_sum_, grad_cx);
  for (double& v : grad_cx) v *= lc;
  backprop_encoding(Encoding{ctx_enc_, ctx_norm_}, context_, grad_cx, grad.table);

  std::vector<double> grad_prev;
  for (std::size_t t = 0; t < prevs_.size(); ++t) {
    std::span<const double> ds(delta_steps_.data() + t * vocab, vocab);
    std::span<const double> pl(prev_logits_.data() + t * vocab, vocab);
    grad.lambda_prev += dot(ds, pl);
    const auto prev_row = table.row(prevs_[t]);
    for (std::size_t v = 0; v < vocab; ++v) {
      if (ds[v] == 0.0) continue;
      auto g = grad.table.row(static_cast<TokenId>(v));
      const double s = lr * ds[v];
      for (std::size_t k = 0; k < dim; ++k) g[k] += s * prev_row[k];
    }
    table_transpose_times(table, ds, grad_prev);
    auto g = grad.table.row(prevs_[t]);
    for (std::size_t k = 0; k < dim; ++k) g[k] += lr * grad_prev[k];
  }

  std::fill(delta_sum_.begin(), delta_sum_.end(), 0.0);
  std::fill(delta_steps_.begin(), delta_steps_.end(), 0.0);
  pending_ = false;
}

double log_likelihood(const GeneratorModel& model, std::span<const TokenId> context,
                      std::span<const TokenId> target, std::span<const TokenId> passage) {
  return TargetScorer(model, context, target).log_likelihood(passage);
}

double log_likelihood(const GeneratorModel& model, const Example& example, const Passage& passage) {
  return log_likelihood(model, example.context_tokens, example.target_tokens, passage.tokens);
}

double accumulate_log_likelihood_gradient(const GeneratorModel& model,
                                          std::span<const TokenId> context,
                                          std::span<const TokenId> target,
                                          std::span<const TokenId> passage, double weight,
                                          GeneratorGrad& grad) {
  TargetScorer scorer(model, context, target);
  const double ll = scorer.accumulate_gradient(passage, weight, grad);
  scorer.finalize(grad);
  return ll;
}

Decoded decode(const GeneratorModel& model, std::span<const TokenId> context,
               std::span<const TokenId> passage, DecodeMode mode, std::size_t beams,
               std::size_t max_len, const DecodeConstraints& constraints) {
  if (passage.empty()) throw InvalidArgument("generator: empty passage");
  if (constraints.min_len > max_len) throw InvalidArgument("decode: min_len exceeds max_len");
  if (beams < 1) throw InvalidArgument("decode: beams must be >= 1");
  if (max_len < 1) throw InvalidArgument("decode: max_len must be >= 1");
  if (mode == DecodeMode::kGreedy) beams = 1;
  const auto& table = model.table;
  table.check_ids(context);
  table.check_ids(passage);
  const std::size_t vocab = table.vocab_size();

  std::vector<double> base(vocab);
  {
    const auto cx = encode_mean(table, context);
    const auto cz = encode_mean(table, passage);
    std::vector<double> a, c;
    table_times(table, cx.unit, a);
    table_times(table, cz.unit, c);
    for (std::size_t v = 0; v < vocab; ++v) {
      base[v] = model.bias[v] + model.lambda_ctx * a[v] + model.lambda_psg * c[v];
    }
  }

  struct Hyp {
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
  };
  std::vector<Hyp> live{Hyp{}};
  std::vector<Hyp> finished;
  std::vector<double> prev_logits, logits(vocab);

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    // (score, token, beam)
    std::vector<std::tuple<double, TokenId, std::size_t>> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const TokenId prev = live[b].tokens.empty() ? Vocabulary::kBos : live[b].tokens.back();
      table_times(table, table.row(prev), prev_logits);
      for (std::size_t v = 0; v < vocab; ++v) logits[v] = base[v] + model.lambda_prev * prev_logits[v];
      logits[static_cast<std::size_t>(Vocabulary::kBos)] = -std::numeric_limits<double>::infinity();
      const double lse = log_sum_exp(logits);
      // Constraints mask candidates but leave the model's probabilities untouched.
      std::vector<bool> blocked(vocab, false);
      blocked[static_cast<std::size_t>(Vocabulary::kBos)] = true;
      if (live[b].tokens.size() < constraints.min_len) {
        blocked[static_cast<std::size_t>(Vocabulary::kEos)] = true;
      }
      if (constraints.no_repeat) {
        for (TokenId t : live[b].tokens) blocked[static_cast<std::size_t>(t)] = true;
      }
      for (std::size_t v = 0; v < vocab; ++v) {
        if (blocked[v]) continue;
        cands.emplace_back(live[b].log_prob + logits[v] - lse, static_cast<TokenId>(v), b);
      }
    }
    if (cands.empty()) break;
    const std::size_t keep = std::min(beams, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const auto& x, const auto& y) {
                        if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
                        if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
                        return std::get<2>(x) < std::get<2>(y);
                      });
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& [score, token, b] = cands[i];
      Hyp h{live[b].tokens, score};
      if (token == Vocabulary::kEos) {
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    // Once the best finished hypothesis beats every live prefix, extending cannot help:
    // log-probabilities only decrease.
    if (!finished.empty() && !live.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& h : finished) best_finished = std::max(best_finished, h.log_prob);
      bool any_better = false;
      for (const auto& h : live) any_better |= h.log_prob > best_finished;
      if (!any_better) live.clear();
    }
  }
  for (auto& h : live) finished.push_back(std::move(h));

  const Hyp* best = nullptr;
  for (const auto& h : finished) {
    if (!best || h.log_prob > best->log_prob) best = &h;
  }
  return Decoded{best->tokens, best->log_prob};
}

}  // namespace guiderag
