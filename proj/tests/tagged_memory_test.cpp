// Copyright 2026 The capsim Authors
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


#include "capsim/tagged_memory.hpp"

#include <array>
#include <cstddef>
#include <vector>

#include <gtest/gtest.h>

#include "capsim/capability.hpp"
#include "capsim/error.hpp"

namespace capsim {
namespace {

const Capability kRoot = Capability::root(0, ~Address{0}, Permissions::all());

template <class F>
Error fault_of(F&& f) {
  try {
    f();
  } catch (const Fault& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a fault";
  return Error::kConfigInvalid;
}

class TaggedMemoryTest : public ::testing::Test {
 protected:
  TaggedMemoryTest() { mem.map_region(0x1000, 0x1000); }

  Capability rw(Address base = 0x1000, Address top = 0x2000) const {
    return derive(kRoot, base, top, perms::kData);
  }

  TaggedMemory mem;
};

TEST(MapRegionTest, HeapLikeRegion) {
  TaggedMemory mem;
  const MappedRegion r = mem.map_region(0x41400000, 0x200000);
  EXPECT_EQ(r.base, 0x41400000u);
  EXPECT_EQ(r.top(), 0x41600000u);
  EXPECT_EQ(mem.probe(0x41400000), MapState::kMapped);
  EXPECT_EQ(mem.probe(0x415fffff), MapState::kMapped);
  EXPECT_EQ(mem.probe(0x41600000), MapState::kUnmapped);
  EXPECT_TRUE(mem.tagged_granules().empty());
}

TEST(MapRegionTest, Errors) {
  TaggedMemory mem;
  mem.map_region(0x1000, 0x10);
  EXPECT_EQ(fault_of([&] { mem.map_region(0x1000, 0x10); }), Error::kOverlappingMapping);
  EXPECT_EQ(fault_of([&] { mem.map_region(0x0ff0, 0x20); }), Error::kOverlappingMapping);
  EXPECT_EQ(fault_of([&] { mem.map_region(0x1001, 0x10); }), Error::kMisaligned);
  EXPECT_EQ(fault_of([&] { mem.map_region(0x3000, 0x11); }), Error::kMisaligned);
}

TEST_F(TaggedMemoryTest, FreshMemoryIsZero) {
  const auto bytes = mem.load_data(rw(), 0x1000, 32);
  for (std::byte b : bytes) EXPECT_EQ(b, std::byte{0});
}

TEST_F(TaggedMemoryTest, LoadDataErrors) {
  const Capability c = rw(0x1000, 0x1100);
  EXPECT_EQ(fault_of([&] { mem.load_data(c, 0x1100, 1); }), Error::kOutOfBounds);
  EXPECT_EQ(fault_of([&] { mem.load_data(c, 0x10f8, 16); }), Error::kOutOfBounds);
  const Capability sealed = seal(c, set_address(derive(kRoot, 0, 16, perms::kSealer), 1));
  EXPECT_EQ(fault_of([&] { mem.load_data(sealed, 0x1000, 1); }), Error::kSealedCapability);
  EXPECT_EQ(fault_of([&] { mem.load_data(c.without_tag(), 0x1000, 1); }),
            Error::kInvalidCapability);
  const Capability wo = derive(kRoot, 0x1000, 0x2000, Permissions(Permissions::kStore));
  EXPECT_EQ(fault_of([&] { mem.load_data(wo, 0x1000, 1); }), Error::kPermissionDenied);
  const Capability wide = rw(0x0, 0x10000);
  EXPECT_EQ(fault_of([&] { mem.load_data(wide, 0x3000, 1); }), Error::kUnmapped);
}

TEST_F(TaggedMemoryTest, OutOfBoundsCursorFaultsOnLoad) {
  const Capability c = set_address(rw(0x1000, 0x1100), 0x3000);
  EXPECT_EQ(fault_of([&] { mem.load_data(c, c.address(), 1); }), Error::kOutOfBounds);
}

TEST_F(TaggedMemoryTest, StoreDataViaReadOnlyFaults) {
  const Capability ro = derive(kRoot, 0x1000, 0x2000, perms::kReadOnly);
  const std::array<std::byte, 1> b{std::byte{1}};
  EXPECT_EQ(fault_of([&] { mem.store_data(ro, 0x1000, b); }), Error::kPermissionDenied);
}

TEST_F(TaggedMemoryTest, StoreCapRoundTrip) {
  const Capability value = set_address(rw(0x1800, 0x1900), 0x1844);
  mem.store_cap(rw(), 0x1010, value);
  EXPECT_EQ(mem.load_cap(rw(), 0x1010), value);
  EXPECT_TRUE(mem.tag_at(0x1010));
}

TEST_F(TaggedMemoryTest, StoreCapPreservesSealState) {
  const Capability code = derive(kRoot, 0x40130000, 0x40190700, perms::kCode);
  const Capability s = make_sentry(set_address(code, 0x40152d61));
  const Capability sealed =
      seal(rw(0x1800, 0x1900), set_address(derive(kRoot, 0, 0x8000, perms::kSealer), 0x1234));
  mem.store_cap(rw(), 0x1000, s);
  mem.store_cap(rw(), 0x1010, sealed);
  EXPECT_EQ(mem.load_cap(rw(), 0x1000), s);
  EXPECT_EQ(mem.load_cap(rw(), 0x1010), sealed);
}

TEST_F(TaggedMemoryTest, StoreCapErrors) {
  const Capability no_w = derive(kRoot, 0x1000, 0x2000, Permissions::parse("rwR"));
  EXPECT_EQ(fault_of([&] { mem.store_cap(no_w, 0x1000, rw()); }), Error::kPermissionDenied);
  EXPECT_EQ(fault_of([&] { mem.store_cap(rw(), 0x1008, rw()); }), Error::kMisaligned);
  EXPECT_EQ(fault_of([&] { mem.store_cap(rw(0x1000, 0x1010), 0x1010, rw()); }),
            Error::kOutOfBounds);
  const Capability sealed =
      seal(rw(), set_address(derive(kRoot, 0, 16, perms::kSealer), 1));
  EXPECT_EQ(fault_of([&] { mem.store_cap(sealed, 0x1000, rw()); }), Error::kSealedCapability);
}

TEST_F(TaggedMemoryTest, StoreUntaggedValueLoadsUntagged) {
  mem.store_cap(rw(), 0x1000, rw().without_tag());
  EXPECT_FALSE(mem.load_cap(rw(), 0x1000).tag());
  EXPECT_FALSE(mem.tag_at(0x1000));
}

TEST_F(TaggedMemoryTest, ByteStoreClearsTag) {
  mem.store_cap(rw(), 0x1020, rw(0x1800, 0x1900));
  const std::array<std::byte, 1> b{std::byte{0x41}};
  mem.store_data(rw(), 0x102f, b);
  const Capability back = mem.load_cap(rw(), 0x1020);
  EXPECT_FALSE(back.tag());
}

TEST_F(TaggedMemoryTest, StoreAcrossGranuleBoundaryClearsBoth) {
  mem.store_cap(rw(), 0x1020, rw(0x1800, 0x1900));
  mem.store_cap(rw(), 0x1030, rw(0x1900, 0x1a00));
  const std::array<std::byte, 2> b{std::byte{1}, std::byte{2}};
  mem.store_data(rw(), 0x102f, b);
  EXPECT_FALSE(mem.load_cap(rw(), 0x1020).tag());
  EXPECT_FALSE(mem.load_cap(rw(), 0x1030).tag());
}

TEST_F(TaggedMemoryTest, LoadCapWithoutLoadCapPermissionStripsTag) {
  const Capability value = rw(0x1800, 0x1900);
  mem.store_cap(rw(), 0x1040, value);
  const Capability r_only = derive(kRoot, 0x1000, 0x2000, Permissions(Permissions::kLoad));
  const Capability back = mem.load_cap(r_only, 0x1040);
  EXPECT_FALSE(back.tag());
  EXPECT_EQ(back.base(), value.base());
  EXPECT_EQ(back.top(), value.top());
  EXPECT_TRUE(mem.tag_at(0x1040));
}

TEST_F(TaggedMemoryTest, LoadCapOverPlainDataIsUntagged) {
  std::vector<std::byte> junk(16, std::byte{0x5a});
  mem.store_data(rw(), 0x1050, junk);
  EXPECT_FALSE(mem.load_cap(rw(), 0x1050).tag());
}

TEST_F(TaggedMemoryTest, LoadCapErrors) {
  EXPECT_EQ(fault_of([&] { mem.load_cap(rw(), 0x1004); }), Error::kMisaligned);
  EXPECT_EQ(fault_of([&] { mem.load_cap(rw(0x1000, 0x1010), 0x1010); }), Error::kOutOfBounds);
  EXPECT_EQ(fault_of([&] { mem.load_cap(rw(0, 0x10000), 0x8000); }), Error::kUnmapped);
}

TEST_F(TaggedMemoryTest, ProbeNeverFaults) {
  EXPECT_EQ(mem.probe(0x1800), MapState::kMapped);
  EXPECT_EQ(mem.probe(0xdead0000), MapState::kUnmapped);
  EXPECT_EQ(mem.probe(0x2000), MapState::kUnmapped);
  EXPECT_EQ(mem.probe(0x0fff), MapState::kUnmapped);
}

TEST_F(TaggedMemoryTest, SweepOverOneStoredCap) {
  mem.store_cap(rw(), 0x1000, rw(0x1800, 0x1810));
  mem.store_cap(rw(), 0x1010, rw(0x1900, 0x1910));
  const AddressRange r{0x1800, 0x1810};
  EXPECT_EQ(mem.sweep_invalidate(std::span(&r, 1)), 1u);
  EXPECT_FALSE(mem.tag_at(0x1000));
  EXPECT_TRUE(mem.tag_at(0x1010));
}

TEST_F(TaggedMemoryTest, SweepOverEmptySetChangesNothing) {
  mem.store_cap(rw(), 0x1000, rw(0x1800, 0x1810));
  const std::string before = mem.snapshot();
  EXPECT_EQ(mem.sweep_invalidate({}), 0u);
  EXPECT_EQ(mem.snapshot(), before);
}

TEST_F(TaggedMemoryTest, SweepMatchesOnBoundsNotAddress) {
  // Cursor outside the swept range, bounds overlapping it.
  mem.store_cap(rw(), 0x1000, set_address(rw(0x1800, 0x1900), 0x1f00));
  const AddressRange r{0x18f0, 0x1a00};
  EXPECT_EQ(mem.sweep_invalidate(std::span(&r, 1)), 1u);
}

TEST_F(TaggedMemoryTest, SnapshotFormat) {
  mem.store_cap(rw(), 0x1010, rw(0x1800, 0x1810));
  EXPECT_EQ(mem.snapshot(),
            "MAP 0x1000 0x1000\n"
            "0x1010 0x1800 [rwRW,0x1800-0x1810]\n");
}

TEST_F(TaggedMemoryTest, NextMappedAfterSkipsHoles) {
  mem.map_region(0x8000, 0x100);
  EXPECT_EQ(mem.next_mapped_after(0x2000), std::optional<Address>(0x8000));
  EXPECT_EQ(mem.next_mapped_after(0x8100), std::nullopt);
}

}  // namespace
}  // namespace capsim
