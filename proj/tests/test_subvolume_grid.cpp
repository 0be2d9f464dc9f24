#include <algorithm>
#include <random>
#include <set>
#include <vector>

#include <catch_amalgamated.hpp>

#include "sparsebeam/subvolume_grid.hpp"
#include "test_support.hpp"

using namespace sparsebeam;

TEST_CASE("block counts", "[grid]") {
  CHECK(SubVolumeGrid(Shape3{32, 32, 32}).count() == 8);
  CHECK(SubVolumeGrid(Shape3{16, 16, 16}).count() == 1);
  const SubVolumeGrid g20(Shape3{20, 20, 20});
  CHECK(g20.count() == 8);
  CHECK(g20.padded_dims() == Shape3{32, 32, 32});
  CHECK(g20.stride() == g20.sub_size());
  const SubVolumeGrid proj(Shape3{60, 96, 96});
  CHECK(proj.blocks_per_axis() == Shape3{4, 6, 6});
  CHECK(proj.count() == 144);
  CHECK_THROWS_AS(SubVolumeGrid(Shape3{0, 4, 4}), ShapeError);
  CHECK_THROWS_AS(SubVolumeGrid(Shape3{4, 4, 4}, Shape3{0, 4, 4}), ConfigError);
}

TEST_CASE("partition of a divisible field", "[grid]") {
  const auto f = testing::uniform_field<float>(Shape3{32, 32, 32}, 1);
  const SubVolumeGrid grid(f.shape());
  const auto blocks = partition(f, grid);
  REQUIRE(blocks.size() == 8);
  for (std::size_t b = 0; b < 8; ++b) {
    CHECK(blocks[b].index == b);
    CHECK(blocks[b].data.shape() == Shape3{16, 16, 16});
  }
  // Block 5 = (1, 0, 1) in (z, y, x) block coordinates.
  CHECK(blocks[5].data(0, 0, 0) == f(16, 0, 16));
  CHECK(blocks[5].data(15, 15, 15) == f(31, 15, 31));
}

TEST_CASE("single-block grid", "[grid]") {
  const auto f = testing::uniform_field<float>(Shape3{16, 16, 16}, 2);
  const SubVolumeGrid grid(f.shape());
  const auto blocks = partition(f, grid);
  REQUIRE(blocks.size() == 1);
  CHECK(blocks[0].data == f);
  CHECK(assemble(blocks, grid) == f);

  const SubVolumeGrid small(Shape3{10, 12, 7});
  REQUIRE(small.count() == 1);
  const auto block = testing::uniform_field<float>(Shape3{16, 16, 16}, 3);
  const auto out = assemble<float>({{0, block}}, small);
  REQUIRE(out.shape() == Shape3{10, 12, 7});
  for (std::size_t z = 0; z < 10; ++z)
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 7; ++x) CHECK(out(z, y, x) == block(z, y, x));
}

TEST_CASE("padded partition zero-fills outside the source", "[grid]") {
  const Shape3 s{20, 20, 20};
  const auto f = testing::uniform_field<float>(s, 4, 0.5, 1.5);
  const SubVolumeGrid grid(s);
  const auto blocks = partition(f, grid);
  REQUIRE(blocks.size() == 8);
  std::size_t outside = 0, inside = 0;
  std::size_t b = 0;
  for (std::size_t bz = 0; bz < 2; ++bz)
    for (std::size_t by = 0; by < 2; ++by)
      for (std::size_t bx = 0; bx < 2; ++bx, ++b) {
        for (std::size_t z = 0; z < 16; ++z)
          for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
              const std::size_t gz = 16 * bz + z, gy = 16 * by + y, gx = 16 * bx + x;
              const float v = blocks[b].data(z, y, x);
              if (gz < 20 && gy < 20 && gx < 20) {
                ++inside;
                CHECK(v == f(gz, gy, gx));
              } else {
                ++outside;
                CHECK(v == 0.0f);
              }
            }
      }
  CHECK(inside == 20 * 20 * 20);
  CHECK(outside == 32 * 32 * 32 - 20 * 20 * 20);
}

TEST_CASE("assemble inverts partition", "[grid]") {
  for (const Shape3 s : {Shape3{32, 32, 32}, Shape3{20, 20, 20}, Shape3{60, 96, 96}, Shape3{17, 5, 33}}) {
    const auto f = testing::uniform_field<float>(s, s.size());
    const SubVolumeGrid grid(s);
    CHECK(assemble(partition(f, grid), grid) == f);
  }
  const auto d = testing::uniform_field<double>(Shape3{18, 18, 18}, 9);
  const SubVolumeGrid grid(d.shape(), Shape3{4, 6, 8});
  CHECK(assemble(partition(d, grid), grid) == d);
}

TEST_CASE("assembly ignores list order", "[grid]") {
  const auto f = testing::uniform_field<float>(Shape3{40, 33, 20}, 6);
  const SubVolumeGrid grid(f.shape());
  auto blocks = partition(f, grid);
  std::mt19937_64 eng(1);
  std::shuffle(blocks.begin(), blocks.end(), eng);
  CHECK(assemble(blocks, grid) == f);
  std::reverse(blocks.begin(), blocks.end());
  CHECK(assemble(blocks, grid) == f);
}

TEST_CASE("assembly errors identify the block", "[grid]") {
  const auto f = testing::uniform_field<float>(Shape3{32, 32, 32}, 7);
  const SubVolumeGrid grid(f.shape());
  SECTION("missing") {
    auto blocks = partition(f, grid);
    blocks.erase(blocks.begin() + 3);
    try {
      (void)assemble(blocks, grid);
      FAIL("expected an assembly error");
    } catch (const AssemblyError& e) {
      CHECK(e.block_index() == 3);
    }
  }
  SECTION("duplicate") {
    auto blocks = partition(f, grid);
    blocks[6].index = 2;
    try {
      (void)assemble(blocks, grid);
      FAIL("expected an assembly error");
    } catch (const AssemblyError& e) {
      CHECK(e.block_index() == 2);
    }
  }
  SECTION("out of range and wrong shape") {
    auto blocks = partition(f, grid);
    blocks[0].index = 8;
    CHECK_THROWS_AS(assemble(blocks, grid), AssemblyError);
    blocks = partition(f, grid);
    blocks[1].data = Field3<float>(Shape3{8, 8, 8});
    CHECK_THROWS_AS(assemble(blocks, grid), AssemblyError);
  }
  CHECK_THROWS_AS(partition(Field3<float>(Shape3{32, 32, 31}), grid), ShapeError);
}

TEST_CASE("block index and offset form a bijection", "[grid]") {
  for (std::size_t nz = 1; nz <= 8; ++nz)
    for (std::size_t ny = 1; ny <= 8; ++ny)
      for (std::size_t nx = 1; nx <= 8; ++nx) {
        const SubVolumeGrid grid(Shape3{2 * nz, 2 * ny, 2 * nx}, Shape3{2, 2, 2});
        REQUIRE(grid.count() == nz * ny * nx);
        std::set<std::array<std::size_t, 3>> seen;
        for (std::size_t i = 0; i < grid.count(); ++i) {
          const auto off = grid.offset(i);
          REQUIRE(off[0] % 2 == 0);
          REQUIRE(off[0] / 2 < nz);
          REQUIRE(off[1] / 2 < ny);
          REQUIRE(off[2] / 2 < nx);
          REQUIRE(grid.index_of(off[0] / 2, off[1] / 2, off[2] / 2) == i);
          seen.insert(off);
        }
        REQUIRE(seen.size() == grid.count());
      }
  CHECK_THROWS_AS(SubVolumeGrid(Shape3{4, 4, 4}, Shape3{2, 2, 2}).offset(8), ShapeError);
}

TEST_CASE("grid descriptor", "[grid]") {
  const auto j = to_json(SubVolumeGrid(Shape3{60, 96, 96}));
  CHECK(j.at("count") == 144);
  CHECK(j.at("padded_dims") == nlohmann::json::array({64, 96, 96}));
  CHECK(j.at("stride") == j.at("sub_size"));
}
