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


#include <cstdint>
#include <random>

#include <gtest/gtest.h>

#include "capsim/scanner.hpp"
#include "support/closure_oracle.hpp"

namespace capsim {
namespace {

constexpr int kMachines = 500;

TEST(ClosureOracleTest, ScannerUnionEqualsBruteForceFixpoint) {
  int mismatches = 0;
  std::size_t total_caps = 0;
  for (int i = 0; i < kMachines; ++i) {
    std::mt19937_64 rng(0x5eed0000 + i);
    testing::RandomMachine m;
    testing::make_random_machine(rng, m);
    total_caps += m.planted;
    const auto scanned = scan_recursive(m.root, m.mem);
    ASSERT_FALSE(scanned.stats.limit_exceeded) << "machine " << i;
    const auto expect = testing::oracle_closure(m.mem, m.root);
    if (scanned.regions.range_union() != expect) {
      ++mismatches;
      ADD_FAILURE() << "machine " << i << "\n" << closure_report(scanned.regions);
    }
  }
  EXPECT_EQ(mismatches, 0);
  EXPECT_GT(total_caps, static_cast<std::size_t>(kMachines) * 8);
}

TEST(ClosureOracleTest, GeneratorStaysWithinSizeLimits) {
  for (int i = 0; i < 200; ++i) {
    std::mt19937_64 rng(0x5eed0000 + i);
    testing::RandomMachine m;
    testing::make_random_machine(rng, m);
    std::uint64_t mapped = 0;
    for (const auto& r : m.mem.regions()) mapped += r.length;
    EXPECT_LE(mapped, 0x10000u);
    EXPECT_LE(m.planted, 32u);
  }
}

}  // namespace
}  // namespace capsim
