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

#ifndef CAPSIM_ALLOCATOR_HPP_
#define CAPSIM_ALLOCATOR_HPP_

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "capsim/capability.hpp"
#include "capsim/error.hpp"
#include "capsim/tagged_memory.hpp"

namespace capsim {

using CompartmentId = std::uint32_t;

struct AllocatorPolicy {
  bool zero_on_free = false;
  bool per_compartment_arenas = false;
  bool revocation = false;
  // Number of free() calls between revocation sweeps.
  std::uint64_t quarantine_epoch_len = 1024;

  void validate() const {
    if (revocation && quarantine_epoch_len == 0) {
      throw Fault(Error::kConfigInvalid, "quarantine_epoch_len must be >= 1");
    }
  }
};

struct Chunk {
  Address base = 0;
  std::uint64_t size = 0;

  AddressRange range() const { return {base, base + size}; }
  bool operator==(const Chunk&) const = default;
};

class Arena {
 public:
  // nullopt for the arena shared by every compartment.
  std::optional<CompartmentId> owner() const { return owner_; }
  const MappedRegion& region() const { return region_; }
  // Most recently freed chunk last; alloc reuses from the back.
  const std::vector<Chunk>& free_list() const { return free_list_; }
  const std::vector<Chunk>& quarantine() const { return quarantine_; }

  struct Live {
    std::uint64_t size;
    std::optional<CompartmentId> requester;
  };
  const std::map<Address, Live>& live() const { return live_; }

 private:
  friend class Heap;

  Arena(std::optional<CompartmentId> owner, MappedRegion region, Capability root)
      : owner_(owner), region_(region), root_(root), bump_(region.base) {}

  std::optional<CompartmentId> owner_;
  MappedRegion region_;
  Capability root_;
  Address bump_;
  std::vector<Chunk> free_list_;
  std::vector<Chunk> quarantine_;
  std::map<Address, Live> live_;
};

// The process heap: one shared arena, or one arena per compartment, carved
// out of a reserved address window. Chunk metadata is kept here rather than
// in simulated memory.
class Heap {
 public:
  Heap(TaggedMemory& memory, Capability authority, AllocatorPolicy policy,
       Address window_base, std::uint64_t arena_size,
       std::uint64_t arena_stride)
      : memory_(&memory), authority_(authority), policy_(policy),
        window_base_(window_base), arena_size_(arena_size),
        arena_stride_(arena_stride) {
    policy_.validate();
  }

  const AllocatorPolicy& policy() const { return policy_; }

  Arena& arena_for(CompartmentId compartment) {
    const std::optional<CompartmentId> key =
        policy_.per_compartment_arenas ? std::optional(compartment) : std::nullopt;
    for (auto& a : arenas_) {
      if (a->owner_ == key) return *a;
    }
    const Address base = window_base_ + arena_stride_ * arenas_.size();
    MappedRegion region = memory_->map_region(base, arena_size_);
    Capability root =
        derive(authority_, region.base, region.top(), perms::kData);
    arenas_.push_back(std::unique_ptr<Arena>(new Arena(key, region, root)));
    return *arenas_.back();
  }

  std::vector<const Arena*> arenas() const {
    std::vector<const Arena*> out;
    for (const auto& a : arenas_) out.push_back(a.get());
    return out;
  }

  // Returns an rwRW capability bounded exactly to the rounded-up chunk.
  // Contents are whatever the previous owner left unless zero_on_free
  // scrubbed them.
  Capability alloc(Arena& arena, std::uint64_t size,
                   std::optional<CompartmentId> requester = std::nullopt) {
    const std::uint64_t rounded =
        TaggedMemory::align_up(size == 0 ? 1 : size);
    std::optional<Chunk> chunk = take(arena, rounded);
    if (!chunk && policy_.revocation && quarantined() > 0) {
      revoke_quarantine();
      chunk = take(arena, rounded);
    }
    if (!chunk) throw Fault(Error::kOutOfMemory, hex(rounded) + " bytes");
    arena.live_[chunk->base] = {rounded, requester ? requester : arena.owner_};
    return derive(arena.root_, chunk->base, chunk->base + rounded, perms::kData);
  }

  void free(Arena& arena, const Capability& cap) {
    if (!cap.tag()) throw Fault(Error::kInvalidCapability, render(cap));
    const Address base = cap.base();
    auto it = arena.live_.find(base);
    if (it == arena.live_.end()) {
      auto covers = [base](const Chunk& c) { return c.range().contains(base); };
      if (std::any_of(arena.free_list_.begin(), arena.free_list_.end(), covers) ||
          std::any_of(arena.quarantine_.begin(), arena.quarantine_.end(), covers)) {
        throw Fault(Error::kDoubleFree, hex(base));
      }
      throw Fault(Error::kForeignChunk, hex(base));
    }
    const Chunk chunk{base, it->second.size};
    arena.live_.erase(it);
    if (policy_.zero_on_free) {
      const std::vector<std::byte> zeros(chunk.size);
      memory_->store_data(arena.root_, chunk.base, zeros);
    }
    if (policy_.revocation) {
      arena.quarantine_.push_back(chunk);
      if (++frees_this_epoch_ >= policy_.quarantine_epoch_len) {
        revoke_quarantine();
      }
    } else {
      arena.free_list_.push_back(chunk);
    }
  }

  // Ends the current epoch: invalidates every capability into quarantined
  // memory, then releases those chunks for reuse. Returns tags cleared.
  std::size_t revoke_quarantine() {
    std::vector<AddressRange> ranges;
    for (const auto& a : arenas_) {
      for (const Chunk& c : a->quarantine_) ranges.push_back(c.range());
    }
    const std::size_t cleared = memory_->sweep_invalidate(ranges);
    for (auto& a : arenas_) {
      a->free_list_.insert(a->free_list_.end(), a->quarantine_.begin(),
                           a->quarantine_.end());
      a->quarantine_.clear();
    }
    frees_this_epoch_ = 0;
    ++epochs_;
    return cleared;
  }

  std::uint64_t epochs() const { return epochs_; }
  std::uint64_t frees_this_epoch() const { return frees_this_epoch_; }

  struct LiveChunk {
    Chunk chunk;
    std::optional<CompartmentId> requester;
  };

  std::optional<LiveChunk> live_chunk_at(Address addr) const {
    for (const auto& a : arenas_) {
      if (!a->region_.range().contains(addr)) continue;
      auto it = a->live_.upper_bound(addr);
      if (it == a->live_.begin()) return std::nullopt;
      --it;
      if (addr >= it->first + it->second.size) return std::nullopt;
      return LiveChunk{{it->first, it->second.size}, it->second.requester};
    }
    return std::nullopt;
  }

 private:
  std::size_t quarantined() const {
    std::size_t n = 0;
    for (const auto& a : arenas_) n += a->quarantine_.size();
    return n;
  }

  std::optional<Chunk> take(Arena& arena, std::uint64_t rounded) {
    auto& fl = arena.free_list_;
    for (auto i = fl.size(); i-- > 0;) {
      if (fl[i].size < rounded) continue;
      const Chunk got{fl[i].base, rounded};
      if (fl[i].size == rounded) {
        fl.erase(fl.begin() + static_cast<std::ptrdiff_t>(i));
      } else {
        fl[i] = {fl[i].base + rounded, fl[i].size - rounded};
      }
      return got;
    }
    if (arena.region_.top() - arena.bump_ >= rounded) {
      const Chunk got{arena.bump_, rounded};
      arena.bump_ += rounded;
      return got;
    }
    return std::nullopt;
  }

  TaggedMemory* memory_;
  Capability authority_;
  AllocatorPolicy policy_;
  Address window_base_;
  std::uint64_t arena_size_;
  std::uint64_t arena_stride_;
  std::vector<std::unique_ptr<Arena>> arenas_;
  std::uint64_t frees_this_epoch_ = 0;
  std::uint64_t epochs_ = 0;
};

}  // namespace capsim

#endif  // CAPSIM_ALLOCATOR_HPP_
