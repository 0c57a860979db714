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

#ifndef CAPSIM_TAGGED_MEMORY_HPP_
#define CAPSIM_TAGGED_MEMORY_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "capsim/capability.hpp"
#include "capsim/error.hpp"

namespace capsim {

// Half-open [base, top).
struct AddressRange {
  Address base = 0;
  Address top = 0;

  constexpr std::uint64_t length() const { return top - base; }
  constexpr bool intersects(const AddressRange& o) const {
    return base < o.top && o.base < top;
  }
  constexpr bool contains(const AddressRange& o) const {
    return base <= o.base && o.top <= top;
  }
  constexpr bool contains(Address a) const { return base <= a && a < top; }
  constexpr bool operator==(const AddressRange&) const = default;
  constexpr auto operator<=>(const AddressRange&) const = default;
};

inline AddressRange range_of(const Capability& c) { return {c.base(), c.top()}; }

struct MappedRegion {
  Address base = 0;
  std::uint64_t length = 0;

  constexpr Address top() const { return base + length; }
  constexpr AddressRange range() const { return {base, base + length}; }
  constexpr bool operator==(const MappedRegion&) const = default;
};

enum class MapState { kMapped, kUnmapped };

// Flat simulated address space made of disjoint mapped spans. One tag bit per
// 16-byte granule, held out of band. All loads and stores go through a
// capability and fault where CHERI hardware would.
//
// In-band layout of a stored capability (little endian):
//   bytes 0..7   address
//   bytes 8..15  perms (bits 0-15) | seal kind (bits 16-17) | otype (18-63)
// Exact bounds are not compressible into the remaining bits, so they live in
// a side table keyed by granule. The side table is never consulted for the
// tag; only store_cap sets a tag.
class TaggedMemory {
 public:
  static constexpr std::uint64_t kGranule = 16;

  static constexpr bool aligned(std::uint64_t v) { return v % kGranule == 0; }
  static constexpr Address align_down(Address a) { return a & ~(kGranule - 1); }
  static constexpr Address align_up(Address a) {
    return (a + kGranule - 1) & ~(kGranule - 1);
  }

  MappedRegion map_region(Address base, std::uint64_t length) {
    if (!aligned(base) || !aligned(length) || length == 0) {
      throw Fault(Error::kMisaligned, "map " + hex(base) + "+" + hex(length));
    }
    if (base + length < base) throw Fault(Error::kMisaligned, "wraps");
    const AddressRange want{base, base + length};
    auto it = spans_.lower_bound(base);
    if (it != spans_.end() && it->second.range().intersects(want)) {
      throw Fault(Error::kOverlappingMapping, hex(base));
    }
    if (it != spans_.begin() && std::prev(it)->second.range().intersects(want)) {
      throw Fault(Error::kOverlappingMapping, hex(base));
    }
    Span span{base, length, std::vector<std::byte>(length)};
    spans_.emplace(base, std::move(span));
    return MappedRegion{base, length};
  }

  std::vector<std::byte> load_data(const Capability& cap, Address addr,
                                   std::uint64_t len) const {
    const Span& s = check_access(cap, addr, len, Permissions::kLoad);
    auto first = s.bytes.begin() + static_cast<std::ptrdiff_t>(addr - s.base);
    return std::vector<std::byte>(first, first + static_cast<std::ptrdiff_t>(len));
  }

  void store_data(const Capability& cap, Address addr,
                  std::span<const std::byte> bytes) {
    Span& s = mutable_span(check_access(cap, addr, bytes.size(), Permissions::kStore));
    std::copy(bytes.begin(), bytes.end(),
              s.bytes.begin() + static_cast<std::ptrdiff_t>(addr - s.base));
    if (!bytes.empty()) {
      clear_tags({align_down(addr), align_up(addr + bytes.size())});
    }
  }

  void store_cap(const Capability& cap, Address addr, const Capability& value) {
    Span& s = mutable_span(check_access(
        cap, addr, kGranule, Permissions::kStore,
        Permissions(Permissions::kStoreCap), /*need_alignment=*/true));
    encode(value, s.bytes.data() + (addr - s.base));
    bounds_[addr] = range_of(value);
    if (value.tag()) {
      tagged_.insert(addr);
    } else {
      tagged_.erase(addr);
    }
  }

  // The returned value is tagged only if the granule is tagged and `cap`
  // carries load_cap; otherwise the tag is silently stripped.
  Capability load_cap(const Capability& cap, Address addr) const {
    const Span& s = check_access(cap, addr, kGranule, Permissions::kLoad,
                                 Permissions::none(), /*need_alignment=*/true);
    Capability value = decode(addr, s.bytes.data() + (addr - s.base));
    value.tag_ = tagged_.contains(addr) && cap.perms().load_cap();
    return value;
  }

  MapState probe(Address addr) const {
    return find_span(addr) != nullptr ? MapState::kMapped : MapState::kUnmapped;
  }

  // Lowest mapped address strictly above `addr`, if any span starts there.
  std::optional<Address> next_mapped_after(Address addr) const {
    auto it = spans_.upper_bound(addr);
    if (it == spans_.end()) return std::nullopt;
    return it->first;
  }

  std::optional<MappedRegion> region_containing(Address addr) const {
    const Span* s = find_span(addr);
    if (s == nullptr) return std::nullopt;
    return MappedRegion{s->base, s->length};
  }

  // Clears the tag of every granule whose stored capability's bounds
  // intersect one of `ranges`. Returns the number of tags cleared.
  std::size_t sweep_invalidate(std::span<const AddressRange> ranges) {
    if (ranges.empty() || tagged_.empty()) return 0;
    std::vector<AddressRange> merged(ranges.begin(), ranges.end());
    std::erase_if(merged, [](const AddressRange& r) { return r.top <= r.base; });
    std::sort(merged.begin(), merged.end());
    std::vector<AddressRange> disjoint;
    for (const auto& r : merged) {
      if (!disjoint.empty() && r.base <= disjoint.back().top) {
        disjoint.back().top = std::max(disjoint.back().top, r.top);
      } else {
        disjoint.push_back(r);
      }
    }
    std::size_t cleared = 0;
    for (auto it = tagged_.begin(); it != tagged_.end();) {
      const AddressRange b = bounds_.at(*it);
      auto hit = std::upper_bound(
          disjoint.begin(), disjoint.end(), b.base,
          [](Address v, const AddressRange& r) { return v < r.top; });
      if (hit != disjoint.end() && hit->base < b.top && b.base < b.top) {
        it = tagged_.erase(it);
        ++cleared;
      } else {
        ++it;
      }
    }
    return cleared;
  }

  // Simulator-side introspection. These bypass capability checks and exist
  // for oracles, invariant checks and debugging dumps; simulated code never
  // calls them.
  bool tag_at(Address granule) const { return tagged_.contains(granule); }

  Capability peek_cap(Address granule) const {
    const Span* s = find_span(granule);
    if (s == nullptr || !aligned(granule)) return Capability();
    Capability value = decode(granule, s->bytes.data() + (granule - s->base));
    value.tag_ = tagged_.contains(granule);
    return value;
  }

  std::vector<std::byte> peek(Address addr, std::uint64_t len) const {
    const Span* s = find_span(addr);
    if (s == nullptr || len > s->top() - addr) throw Fault(Error::kUnmapped, hex(addr));
    auto first = s->bytes.begin() + static_cast<std::ptrdiff_t>(addr - s->base);
    return std::vector<std::byte>(first, first + static_cast<std::ptrdiff_t>(len));
  }

  const std::set<Address>& tagged_granules() const { return tagged_; }

  std::vector<MappedRegion> regions() const {
    std::vector<MappedRegion> out;
    for (const auto& [base, s] : spans_) out.push_back({base, s.length});
    return out;
  }

  // "MAP <base> <len>" per span, then "<granule> <render(cap)>" per tagged
  // granule, both in address order.
  std::string snapshot() const {
    std::string out;
    for (const auto& [base, s] : spans_) {
      out += "MAP " + hex(base) + " " + hex(s.length) + "\n";
    }
    for (Address g : tagged_) {
      out += hex(g) + " " + render(peek_cap(g)) + "\n";
    }
    return out;
  }

 private:
  struct Span {
    Address base;
    std::uint64_t length;
    std::vector<std::byte> bytes;

    Address top() const { return base + length; }
    AddressRange range() const { return {base, base + length}; }
  };

  const Span* find_span(Address addr) const {
    auto it = spans_.upper_bound(addr);
    if (it == spans_.begin()) return nullptr;
    --it;
    return addr < it->second.top() ? &it->second : nullptr;
  }

  Span& mutable_span(const Span& s) { return spans_.find(s.base)->second; }

  const Span& check_access(const Capability& cap, Address addr,
                           std::uint64_t len, Permissions::Bit need,
                           Permissions also_need = Permissions::none(),
                           bool need_alignment = false) const {
    if (!cap.tag()) throw Fault(Error::kInvalidCapability, render(cap));
    if (cap.is_sealed()) throw Fault(Error::kSealedCapability, render(cap));
    if (!cap.perms().has(need) || !cap.perms().contains(also_need)) {
      throw Fault(Error::kPermissionDenied, render(cap));
    }
    if (need_alignment && !aligned(addr)) {
      throw Fault(Error::kMisaligned, hex(addr));
    }
    if (!cap.in_bounds(addr, len)) {
      throw Fault(Error::kOutOfBounds, hex(addr) + " via " + render(cap));
    }
    const Span* s = find_span(addr);
    if (s == nullptr || len > s->top() - addr) {
      throw Fault(Error::kUnmapped, hex(addr));
    }
    return *s;
  }

  void clear_tags(AddressRange granules) {
    tagged_.erase(tagged_.lower_bound(granules.base),
                  tagged_.lower_bound(granules.top));
  }

  static void encode(const Capability& c, std::byte* out) {
    const std::uint64_t lo = c.address();
    const std::uint64_t hi =
        static_cast<std::uint64_t>(c.perms().bits()) |
        (static_cast<std::uint64_t>(c.seal_state().kind()) << 16) |
        (c.seal_state().otype() << 18);
    for (int i = 0; i < 8; ++i) {
      out[i] = static_cast<std::byte>(lo >> (8 * i));
      out[8 + i] = static_cast<std::byte>(hi >> (8 * i));
    }
  }

  Capability decode(Address granule, const std::byte* in) const {
    std::uint64_t lo = 0;
    std::uint64_t hi = 0;
    for (int i = 0; i < 8; ++i) {
      lo |= static_cast<std::uint64_t>(in[i]) << (8 * i);
      hi |= static_cast<std::uint64_t>(in[8 + i]) << (8 * i);
    }
    AddressRange b{};
    if (auto it = bounds_.find(granule); it != bounds_.end()) b = it->second;
    const auto kind = static_cast<SealState::Kind>((hi >> 16) & 0x3);
    SealState seal;
    switch (kind) {
      case SealState::Kind::kSealed: seal = SealState::sealed(hi >> 18); break;
      case SealState::Kind::kSentry: seal = SealState::sentry(); break;
      default: break;
    }
    return Capability(lo, b.base, b.top,
                      Permissions(static_cast<std::uint16_t>(hi & 0xffff)), seal,
                      false);
  }

  std::map<Address, Span> spans_;
  std::set<Address> tagged_;
  std::unordered_map<Address, AddressRange> bounds_;
};

}  // namespace capsim

#endif  // CAPSIM_TAGGED_MEMORY_HPP_
