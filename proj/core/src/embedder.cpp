// SPDX-License-Identifier: Apache-2.0

#include "guiderag/embedder.hpp"

#include <cmath>
#include <random>
#include <string>

#include "binary_io.hpp"

namespace guiderag {

namespace {

void normalize_row(std::span<double> row) {
  double n2 = 0.0;
  for (double v : row) n2 += v * v;
  const double n = std::sqrt(n2);
  if (n == 0.0) throw NumericalError("cannot normalize a zero embedding row");
  for (double& v : row) v /= n;
}

}  // namespace

void TableGrad::zero() { std::fill(values_.begin(), values_.end(), 0.0); }

void TableGrad::add(const TableGrad& other, double scale) {
  if (other.values_.size() != values_.size()) throw InvalidArgument("gradient shape mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

EmbeddingTable EmbeddingTable::init(std::size_t vocab_size, std::size_t dim, std::uint64_t seed) {
  if (dim < 2) throw InvalidArgument("embedding dim must be >= 2, got " + std::to_string(dim));
  if (vocab_size == 0) throw InvalidArgument("embedding table needs a non-empty vocabulary");
  EmbeddingTable t;
  t.vocab_size_ = vocab_size;
  t.dim_ = dim;
  t.rows_.resize(vocab_size * dim);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-0.5, 0.5);
  for (double& v : t.rows_) v = uniform(rng);
  t.normalize();
  t.grad_ = TableGrad(vocab_size, dim);
  return t;
}

void EmbeddingTable::check_ids(std::span<const TokenId> ids) const {
  for (TokenId id : ids) {
    if (!valid_id(id)) {
      throw InvalidArgument("token id " + std::to_string(id) + " out of range for table of " +
                            std::to_string(vocab_size_) + " rows");
    }
  }
}

std::vector<std::vector<double>> EmbeddingTable::encode(std::span<const TokenId> ids) const {
  check_ids(ids);
  std::vector<std::vector<double>> out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    auto r = row(id);
    out.emplace_back(r.begin(), r.end());
  }
  return out;
}

void EmbeddingTable::apply_gradients(double learning_rate) {
  if (!(learning_rate > 0.0)) {
    throw InvalidArgument("learning rate must be positive, got " + std::to_string(learning_rate));
  }
  for (std::size_t r = 0; r < vocab_size_; ++r) {
    auto g = grad_.row(static_cast<TokenId>(r));
    for (double v : g) {
      if (!std::isfinite(v)) {
        throw NumericalError("non-finite gradient in embedding row " + std::to_string(r));
      }
    }
  }
  for (std::size_t r = 0; r < vocab_size_; ++r) {
    auto g = grad_.row(static_cast<TokenId>(r));
    bool touched = false;
    for (double v : g) touched |= (v != 0.0);
    if (!touched) continue;
    auto w = mutable_row(static_cast<TokenId>(r));
    for (std::size_t i = 0; i < dim_; ++i) w[i] += learning_rate * g[i];
    normalize_row(w);
  }
  grad_.zero();
}

void EmbeddingTable::normalize() {
  for (std::size_t r = 0; r < vocab_size_; ++r) normalize_row(mutable_row(static_cast<TokenId>(r)));
}

void EmbeddingTable::write(std::ostream& out) const {
  detail::write_header(out, "GRAGEMB");
  detail::write_pod<std::uint64_t>(out, vocab_size_);
  detail::write_pod<std::uint64_t>(out, dim_);
  detail::write_doubles(out, rows_);
}

EmbeddingTable EmbeddingTable::read(std::istream& in) {
  detail::read_header(in, "GRAGEMB");
  EmbeddingTable t;
  t.vocab_size_ = detail::read_pod<std::uint64_t>(in);
  t.dim_ = detail::read_pod<std::uint64_t>(in);
  t.rows_ = detail::read_doubles(in);
  if (t.dim_ < 2 || t.rows_.size() != t.vocab_size_ * t.dim_) {
    throw InvalidArgument("corrupt embedding checkpoint");
  }
  t.grad_ = TableGrad(t.vocab_size_, t.dim_);
  return t;
}

}  // namespace guiderag
