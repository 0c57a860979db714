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

#ifndef CAPSIM_SCANNER_HPP_
#define CAPSIM_SCANNER_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "capsim/capability.hpp"
#include "capsim/error.hpp"
#include "capsim/tagged_memory.hpp"

namespace capsim {

struct ScanLimits {
  std::size_t max_depth = 64;
  std::uint64_t max_granules = std::uint64_t{1} << 24;
};

struct ScanStats {
  std::size_t caps_found = 0;
  std::uint64_t granules_probed = 0;
  std::size_t max_depth = 0;
  bool limit_exceeded = false;
};

enum class InsertResult { kAlreadyCovered, kInserted, kReplacedSuperset };

// The scanner's seen-list. Dereferenceable capabilities obey the
// subset/superset rule: a capability whose range lies inside an existing
// entry is ignored, and one that strictly contains existing entries replaces
// them. A wider range only absorbs a narrower one if it can also load
// capabilities whenever the narrower one can, so absorbing never hides
// anything from the walk. Sealed and sentry capabilities cannot be
// dereferenced; they are kept in a separate list, deduplicated exactly.
class RegionSet {
 public:
  struct Entry {
    Capability cap;
    // Granule the capability was loaded from; nullopt for a scan root.
    std::optional<Address> found_at;

    AddressRange range() const { return range_of(cap); }
  };

  InsertResult insert(const Capability& cap,
                      std::optional<Address> found_at = std::nullopt) {
    if (!cap.tag()) throw Fault(Error::kInvalidCapability, render(cap));
    if (cap.is_sealed()) {
      for (const auto& e : opaque_) {
        if (e.cap == cap) return InsertResult::kAlreadyCovered;
      }
      opaque_.push_back({cap, found_at});
      return InsertResult::kInserted;
    }
    if (!cap.perms().load()) throw Fault(Error::kPermissionDenied, render(cap));
    for (const auto& e : entries_) {
      if (covers(e.cap, cap)) return InsertResult::kAlreadyCovered;
    }
    const auto removed = std::erase_if(
        entries_, [&cap](const Entry& e) { return covers(cap, e.cap); });
    entries_.push_back({cap, found_at});
    return removed > 0 ? InsertResult::kReplacedSuperset : InsertResult::kInserted;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<Entry>& opaque() const { return opaque_; }
  std::size_t size() const { return entries_.size() + opaque_.size(); }
  bool empty() const { return size() == 0; }

  // Union of the dereferenceable ranges as sorted disjoint intervals.
  std::vector<AddressRange> range_union() const {
    std::vector<AddressRange> rs;
    for (const auto& e : entries_) {
      if (e.cap.top() > e.cap.base()) rs.push_back(e.range());
    }
    return normalize(std::move(rs));
  }

  static std::vector<AddressRange> normalize(std::vector<AddressRange> rs) {
    std::sort(rs.begin(), rs.end());
    std::vector<AddressRange> out;
    for (const auto& r : rs) {
      if (!out.empty() && r.base <= out.back().top) {
        out.back().top = std::max(out.back().top, r.top);
      } else {
        out.push_back(r);
      }
    }
    return out;
  }

 private:
  static bool covers(const Capability& wide, const Capability& narrow) {
    return range_of(wide).contains(range_of(narrow)) &&
           (wide.perms().load_cap() || !narrow.perms().load_cap());
  }

  std::vector<Entry> entries_;
  std::vector<Entry> opaque_;
};

// Walks every granule reachable from `root` and records each capability
// found into `set`. Depth-first with an explicit worklist. Unmapped holes
// are skipped rather than faulting. Sealed and sentry capabilities are
// recorded but never followed. A root already covered by `set` adds nothing.
inline ScanStats scan_into(RegionSet& set, const Capability& root,
                           const TaggedMemory& memory, ScanLimits limits = {}) {
  ScanStats stats;
  if (!root.tag()) return stats;
  if (root.is_sealed()) {
    set.insert(root);
    stats.caps_found = set.size();
    return stats;
  }
  if (!root.perms().load()) return stats;
  if (set.insert(root) == InsertResult::kAlreadyCovered) {
    stats.caps_found = set.size();
    return stats;
  }

  std::vector<std::pair<Capability, std::size_t>> worklist{{root, 0}};
  while (!worklist.empty() && !stats.limit_exceeded) {
    const auto [cap, depth] = worklist.back();
    worklist.pop_back();
    stats.max_depth = std::max(stats.max_depth, depth);
    // Loads through a capability without load_cap only ever return
    // untagged values.
    if (!cap.perms().load_cap()) continue;

    Address g = TaggedMemory::align_up(cap.base());
    while (g < cap.top() && cap.top() - g >= TaggedMemory::kGranule) {
      if (stats.granules_probed >= limits.max_granules) {
        stats.limit_exceeded = true;
        break;
      }
      ++stats.granules_probed;
      if (memory.probe(g) == MapState::kUnmapped) {
        const auto next = memory.next_mapped_after(g);
        if (!next || *next >= cap.top()) break;
        g = TaggedMemory::align_up(*next);
        continue;
      }
      Capability found;
      try {
        found = memory.load_cap(cap, g);
      } catch (const Fault&) {
        g += TaggedMemory::kGranule;
        continue;
      }
      if (found.tag()) {
        if (found.is_sealed()) {
          set.insert(found, g);
        } else if (found.perms().load() &&
                   set.insert(found, g) != InsertResult::kAlreadyCovered) {
          if (depth + 1 > limits.max_depth) {
            stats.limit_exceeded = true;
          } else {
            worklist.emplace_back(found, depth + 1);
          }
        }
      }
      g += TaggedMemory::kGranule;
    }
  }
  stats.caps_found = set.size();
  return stats;
}

struct ScanResult {
  RegionSet regions;
  ScanStats stats;
};

// Transitive closure of `root`.
inline ScanResult scan_recursive(const Capability& root, const TaggedMemory& memory,
                                 ScanLimits limits = {}) {
  ScanResult r;
  r.stats = scan_into(r.regions, root, memory, limits);
  return r;
}

struct FoundCap {
  Address location = 0;
  Capability cap;
};

// Every tagged capability stored inside the set's dereferenceable regions
// whose permissions include `required`, ordered by location.
inline std::vector<FoundCap> find_caps_with_perms(const RegionSet& set,
                                                  const TaggedMemory& memory,
                                                  Permissions required) {
  std::vector<FoundCap> out;
  const auto& tagged = memory.tagged_granules();
  for (const auto& e : set.entries()) {
    if (!e.cap.perms().load_cap()) continue;
    // Untagged granules can never match, so only the tagged ones inside the
    // range are loaded. Each load still goes through the entry capability.
    for (auto it = tagged.lower_bound(e.cap.base());
         it != tagged.end() && *it < e.cap.top(); ++it) {
      if (!e.cap.in_bounds(*it, TaggedMemory::kGranule)) continue;
      const Capability c = memory.load_cap(e.cap, *it);
      if (c.tag() && c.perms().contains(required)) out.push_back({*it, c});
    }
  }
  std::sort(out.begin(), out.end(),
            [](const FoundCap& a, const FoundCap& b) { return a.location < b.location; });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const FoundCap& a, const FoundCap& b) {
                          return a.location == b.location;
                        }),
            out.end());
  return out;
}

struct ByteHit {
  Address address = 0;
  Capability governing;
};

// Every occurrence of `needle` inside a readable region of the set. Reads
// stay within one capability's bounds and one mapped span, so a match that
// would straddle either boundary is not reported.
inline std::vector<ByteHit> search_bytes(const RegionSet& set,
                                         const TaggedMemory& memory,
                                         std::span<const std::byte> needle) {
  std::vector<ByteHit> out;
  if (needle.empty()) return out;
  const std::boyer_moore_horspool_searcher searcher(needle.begin(), needle.end());
  for (const auto& e : set.entries()) {
    Address at = e.cap.base();
    while (at < e.cap.top()) {
      const auto region = memory.region_containing(at);
      if (!region) {
        const auto next = memory.next_mapped_after(at);
        if (!next || *next >= e.cap.top()) break;
        at = *next;
        continue;
      }
      const Address end = std::min(region->top(), e.cap.top());
      const auto bytes = memory.load_data(e.cap, at, end - at);
      for (auto it = std::search(bytes.begin(), bytes.end(), searcher);
           it != bytes.end();
           it = std::search(it + 1, bytes.end(), searcher)) {
        out.push_back({at + static_cast<Address>(it - bytes.begin()), e.cap});
      }
      at = end;
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ByteHit& a, const ByteHit& b) {
    return a.address < b.address;
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const ByteHit& a, const ByteHit& b) {
                          return a.address == b.address;
                        }),
            out.end());
  return out;
}

inline std::vector<ByteHit> search_bytes(const RegionSet& set,
                                         const TaggedMemory& memory,
                                         std::string_view needle) {
  const auto* p = reinterpret_cast<const std::byte*>(needle.data());
  return search_bytes(set, memory, std::span<const std::byte>(p, needle.size()));
}

// One render() line per entry, dereferenceable entries first.
inline std::string closure_report(const RegionSet& set) {
  std::string out;
  for (const auto& e : set.entries()) out += render(e.cap) + "\n";
  for (const auto& e : set.opaque()) out += render(e.cap) + "\n";
  return out;
}

}  // namespace capsim

#endif  // CAPSIM_SCANNER_HPP_
