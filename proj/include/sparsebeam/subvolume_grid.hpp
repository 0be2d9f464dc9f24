#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsebeam/field.hpp"

namespace sparsebeam {

/// Non-overlapping tiling of a 3D field into fixed-size blocks (stride equals
/// block size). Dimensions are zero-padded up to a multiple of the block size.
/// Blocks are numbered lexicographically by (block_0, block_1, block_2), i.e.
/// slowest axis first.
class SubVolumeGrid {
 public:
  explicit SubVolumeGrid(Shape3 source_dims, Shape3 sub_size = {16, 16, 16})
      : source_(source_dims), sub_(sub_size) {
    if (source_dims.size() == 0) throw ShapeError("grid: empty source field");
    if (sub_size.size() == 0) throw ConfigError("grid: sub-volume size must be positive");
    for (std::size_t a = 0; a < 3; ++a) counts_[a] = (source_[a] + sub_[a] - 1) / sub_[a];
  }

  [[nodiscard]] const Shape3& source_dims() const noexcept { return source_; }
  [[nodiscard]] const Shape3& sub_size() const noexcept { return sub_; }
  [[nodiscard]] const Shape3& stride() const noexcept { return sub_; }
  [[nodiscard]] Shape3 padded_dims() const noexcept {
    return {counts_[0] * sub_.d0, counts_[1] * sub_.d1, counts_[2] * sub_.d2};
  }
  [[nodiscard]] Shape3 blocks_per_axis() const noexcept { return {counts_[0], counts_[1], counts_[2]}; }
  [[nodiscard]] std::size_t count() const noexcept { return counts_[0] * counts_[1] * counts_[2]; }

  /// Voxel offset of a block's first corner in the padded field.
  [[nodiscard]] std::array<std::size_t, 3> offset(std::size_t index) const {
    if (index >= count()) throw ShapeError("grid: block index " + std::to_string(index) + " out of range");
    const std::size_t b2 = index % counts_[2];
    const std::size_t b1 = (index / counts_[2]) % counts_[1];
    const std::size_t b0 = index / (counts_[2] * counts_[1]);
    return {b0 * sub_.d0, b1 * sub_.d1, b2 * sub_.d2};
  }

  [[nodiscard]] std::size_t index_of(std::size_t b0, std::size_t b1, std::size_t b2) const noexcept {
    return (b0 * counts_[1] + b1) * counts_[2] + b2;
  }

  friend bool operator==(const SubVolumeGrid& a, const SubVolumeGrid& b) {
    return a.source_ == b.source_ && a.sub_ == b.sub_;
  }

 private:
  Shape3 source_;
  Shape3 sub_;
  std::array<std::size_t, 3> counts_{};
};

template <typename Real>
struct SubVolume {
  std::size_t index = 0;
  Field3<Real> data;
};

/// Extracts one block; voxels beyond the source extent read as zero.
template <typename Real>
[[nodiscard]] Field3<Real> extract_block(const Field3<Real>& field, const SubVolumeGrid& grid, std::size_t index) {
  if (field.shape() != grid.source_dims()) {
    throw ShapeError("partition: field " + field.shape().str() + " does not match grid " + grid.source_dims().str());
  }
  const auto off = grid.offset(index);
  const Shape3 sub = grid.sub_size();
  const Shape3 src = grid.source_dims();
  Field3<Real> block(sub);
  for (std::size_t i = 0; i < sub.d0 && off[0] + i < src.d0; ++i) {
    for (std::size_t j = 0; j < sub.d1 && off[1] + j < src.d1; ++j) {
      const std::size_t n = std::min(sub.d2, src.d2 - off[2]);
      const Real* from = &field(off[0] + i, off[1] + j, off[2]);
      std::copy(from, from + n, &block(i, j, 0));
    }
  }
  return block;
}

template <typename Real>
[[nodiscard]] std::vector<SubVolume<Real>> partition(const Field3<Real>& field, const SubVolumeGrid& grid) {
  std::vector<SubVolume<Real>> blocks;
  blocks.reserve(grid.count());
  for (std::size_t b = 0; b < grid.count(); ++b) blocks.push_back({b, extract_block(field, grid, b)});
  return blocks;
}

/// Places every block at its grid offset and crops the padding. Each grid
/// index must appear exactly once; list order is irrelevant.
template <typename Real>
[[nodiscard]] Field3<Real> assemble(const std::vector<SubVolume<Real>>& blocks, const SubVolumeGrid& grid) {
  std::vector<bool> seen(grid.count(), false);
  Field3<Real> out(grid.source_dims());
  const Shape3 sub = grid.sub_size();
  const Shape3 src = grid.source_dims();
  for (const auto& blk : blocks) {
    if (blk.index >= grid.count()) throw AssemblyError("assemble: block index out of range", blk.index);
    if (seen[blk.index]) throw AssemblyError("assemble: duplicate block", blk.index);
    if (blk.data.shape() != sub) throw AssemblyError("assemble: block has shape " + blk.data.shape().str(), blk.index);
    seen[blk.index] = true;
    const auto off = grid.offset(blk.index);
    for (std::size_t i = 0; i < sub.d0 && off[0] + i < src.d0; ++i) {
      for (std::size_t j = 0; j < sub.d1 && off[1] + j < src.d1; ++j) {
        const std::size_t n = std::min(sub.d2, src.d2 - off[2]);
        const Real* from = &blk.data(i, j, 0);
        std::copy(from, from + n, &out(off[0] + i, off[1] + j, off[2]));
      }
    }
  }
  for (std::size_t b = 0; b < seen.size(); ++b) {
    if (!seen[b]) throw AssemblyError("assemble: missing block", b);
  }
  return out;
}

inline nlohmann::json to_json(const SubVolumeGrid& g) {
  const auto s = g.source_dims(), sub = g.sub_size(), pad = g.padded_dims();
  return {{"source_dims", {s.d0, s.d1, s.d2}},
          {"sub_size", {sub.d0, sub.d1, sub.d2}},
          {"stride", {sub.d0, sub.d1, sub.d2}},
          {"padded_dims", {pad.d0, pad.d1, pad.d2}},
          {"count", g.count()},
          {"ordering", "lexicographic (block_0, block_1, block_2), slowest axis first"}};
}

}  // namespace sparsebeam
