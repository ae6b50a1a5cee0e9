// SPDX-License-Identifier: Apache-2.0
//
// Learnable token embedding tables kept on the unit sphere.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "guiderag/common.hpp"

namespace guiderag {

/// Dense vocab_size x dim gradient buffer, layout-compatible with EmbeddingTable rows.
class TableGrad {
 public:
  TableGrad() = default;
  TableGrad(std::size_t vocab_size, std::size_t dim)
      : vocab_size_(vocab_size), dim_(dim), values_(vocab_size * dim, 0.0) {}

  std::span<double> row(TokenId id) {
    return {values_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }
  std::span<const double> row(TokenId id) const {
    return {values_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::size_t dim() const { return dim_; }
  std::size_t vocab_size() const { return vocab_size_; }

  void zero();
  void add(const TableGrad& other, double scale = 1.0);

 private:
  std::size_t vocab_size_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  /// Rows drawn i.i.d. from U[-0.5, 0.5] with a seeded generator, then unit-normalized.
  static EmbeddingTable init(std::size_t vocab_size, std::size_t dim, std::uint64_t seed);

  std::size_t dim() const { return dim_; }
  std::size_t vocab_size() const { return vocab_size_; }

  std::span<const double> row(TokenId id) const {
    return {rows_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }
  /// Direct write access, used by finite-difference checks and checkpoint loading.
  std::span<double> mutable_row(TokenId id) {
    return {rows_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }
  std::span<const double> data() const { return rows_; }
  std::span<double> mutable_data() { return rows_; }

  bool valid_id(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < vocab_size_;
  }
  /// Throws InvalidArgument naming the first out-of-range id.
  void check_ids(std::span<const TokenId> ids) const;

  std::vector<std::vector<double>> encode(std::span<const TokenId> ids) const;

  TableGrad& grad() { return grad_; }
  const TableGrad& grad() const { return grad_; }

  /// Projected gradient ascent: rows += lr * grad, touched rows renormalized, grad zeroed.
  void apply_gradients(double learning_rate);

  /// Renormalizes every row to unit length.
  void normalize();

  void write(std::ostream& out) const;
  static EmbeddingTable read(std::istream& in);

  /// Compares parameters only; the gradient accumulator is ignored.
  bool operator==(const EmbeddingTable& other) const {
    return dim_ == other.dim_ && vocab_size_ == other.vocab_size_ && rows_ == other.rows_;
  }

 private:
  std::size_t vocab_size_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> rows_;
  TableGrad grad_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace guiderag
