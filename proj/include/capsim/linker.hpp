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

#ifndef CAPSIM_LINKER_HPP_
#define CAPSIM_LINKER_HPP_

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "capsim/allocator.hpp"
#include "capsim/capability.hpp"
#include "capsim/error.hpp"
#include "capsim/tagged_memory.hpp"

namespace capsim {

struct LinkerConfig {
  bool seal_handles = false;
  Permissions mapbase_perms = perms::kCodeExecutive;
};

// Byte offsets of the object record the linker keeps in its private memory.
// dlopen() hands out a capability to one of these records, so code that knows
// the layout can walk it with ordinary loads.
namespace obj_layout {
inline constexpr std::uint64_t kPath = 0x00;     // cap to NUL-terminated path
inline constexpr std::uint64_t kMapbase = 0x10;  // cap over the whole image
inline constexpr std::uint64_t kNext = 0x20;     // cap to next record or null
inline constexpr std::uint64_t kPrev = 0x30;     // cap to previous record or null
inline constexpr std::uint64_t kMapsize = 0x40;  // u64
inline constexpr std::uint64_t kMagic = 0x48;    // u64
inline constexpr std::uint64_t kSize = 0x50;
inline constexpr std::uint64_t kMagicValue = 0xd5a1'0b1e'c7e5'0001;
}  // namespace obj_layout

struct ObjEntry {
  std::string path;
  MappedRegion image;
  Capability mapbase;
  Address record = 0;
  std::map<std::string, Capability, std::less<>> exports;
};

// Loads a capability field of an object record through `entry`. Faults are
// those of the underlying load (a sealed handle faults here).
inline Capability load_obj_field(const TaggedMemory& memory,
                                 const Capability& entry, std::uint64_t field) {
  return memory.load_cap(entry, entry.address() + field);
}

// The following record, or nullopt at the end of the list.
inline std::optional<Capability> obj_next(const TaggedMemory& memory,
                                          const Capability& entry) {
  Capability next = load_obj_field(memory, entry, obj_layout::kNext);
  if (!next.tag()) return std::nullopt;
  return next;
}

inline std::optional<Capability> obj_prev(const TaggedMemory& memory,
                                          const Capability& entry) {
  Capability prev = load_obj_field(memory, entry, obj_layout::kPrev);
  if (!prev.tag()) return std::nullopt;
  return prev;
}

// Reads the path string of a record through capabilities only.
inline std::string obj_path(const TaggedMemory& memory, const Capability& entry) {
  const Capability path = load_obj_field(memory, entry, obj_layout::kPath);
  const auto bytes = memory.load_data(path, path.base(), path.length());
  std::string out;
  for (std::byte b : bytes) {
    if (b == std::byte{0}) break;
    out.push_back(static_cast<char>(b));
  }
  return out;
}

// Runtime linker model: an object list materialized in simulated memory,
// per-compartment GOTs filled eagerly, and dlopen().
class Linker {
 public:
  static constexpr std::uint64_t kPrivateRegionSize = 0x2000;

  Linker(TaggedMemory& memory, Capability authority, MappedRegion private_region,
         Capability sealer, LinkerConfig config)
      : memory_(&memory), authority_(authority),
        private_(derive(authority, private_region.base, private_region.top(),
                        perms::kData)),
        cursor_(private_region.base), sealer_(sealer), config_(config) {}

  const LinkerConfig& config() const { return config_; }
  const std::deque<ObjEntry>& objects() const { return objects_; }
  OType handle_otype() const { return sealer_.address(); }

  // Appends an object to the list. `exports` maps symbol names to code
  // capabilities inside the image.
  const ObjEntry& register_object(
      std::string path, MappedRegion image,
      std::map<std::string, Capability, std::less<>> exports = {}) {
    for (const auto& o : objects_) {
      if (o.path == path) throw Fault(Error::kDuplicateObject, path);
    }
    ObjEntry entry;
    entry.path = std::move(path);
    entry.image = image;
    entry.mapbase =
        derive(authority_, image.base, image.top(), config_.mapbase_perms);
    entry.exports = std::move(exports);

    std::vector<std::byte> text(entry.path.size() + 1);
    std::transform(entry.path.begin(), entry.path.end(), text.begin(),
                   [](char c) { return static_cast<std::byte>(c); });
    const Address str = bump(text.size());
    memory_->store_data(private_, str, text);
    const Capability path_cap =
        derive(private_, str, str + text.size(), perms::kReadOnly);

    entry.record = bump(obj_layout::kSize);
    const Capability rec = record_cap(entry.record);
    memory_->store_cap(private_, entry.record + obj_layout::kPath, path_cap);
    memory_->store_cap(private_, entry.record + obj_layout::kMapbase, entry.mapbase);
    memory_->store_cap(private_, entry.record + obj_layout::kNext, Capability());
    memory_->store_cap(private_, entry.record + obj_layout::kPrev,
                       objects_.empty() ? Capability()
                                        : record_cap(objects_.back().record));
    store_u64(entry.record + obj_layout::kMapsize, image.length);
    store_u64(entry.record + obj_layout::kMagic, obj_layout::kMagicValue);
    if (!objects_.empty()) {
      memory_->store_cap(private_, objects_.back().record + obj_layout::kNext, rec);
    }
    objects_.push_back(std::move(entry));
    return objects_.back();
  }

  // Returns a capability to the object's record. With seal_handles the
  // capability is sealed under the linker's private otype.
  Capability dlopen(std::string_view name) const {
    const ObjEntry* obj = find(name);
    if (obj == nullptr) throw Fault(Error::kObjectNotFound, std::string(name));
    Capability handle = record_cap(obj->record);
    if (config_.seal_handles) handle = seal(handle, sealer_);
    return handle;
  }

  // Host-side unsealing for linker entry points that accept a handle.
  Capability open_handle(const Capability& handle) const {
    if (handle.seal_state().kind() == SealState::Kind::kSealed) {
      return unseal(handle, sealer_);
    }
    return handle;
  }

  void link(CompartmentId compartment, std::string_view symbol) {
    for (const auto& o : objects_) {
      if (auto it = o.exports.find(symbol); it != o.exports.end()) {
        got_[compartment][std::string(symbol)] = make_sentry(it->second);
        return;
      }
    }
    throw Fault(Error::kUnlinkedSymbol, std::string(symbol) + " not exported");
  }

  Capability got_resolve(CompartmentId compartment, std::string_view symbol) const {
    auto table = got_.find(compartment);
    if (table != got_.end()) {
      if (auto it = table->second.find(symbol); it != table->second.end()) {
        return it->second;
      }
    }
    throw Fault(Error::kUnlinkedSymbol, std::string(symbol));
  }

  std::vector<Capability> got_entries(CompartmentId compartment) const {
    std::vector<Capability> out;
    if (auto table = got_.find(compartment); table != got_.end()) {
      for (const auto& [name, cap] : table->second) out.push_back(cap);
    }
    return out;
  }

  bool got_contains(CompartmentId compartment, const Capability& cap) const {
    auto table = got_.find(compartment);
    if (table == got_.end()) return false;
    for (const auto& [name, c] : table->second) {
      if (c == cap) return true;
    }
    return false;
  }

  // True when `entry` is the sentry the linker placed in GOTs for `symbol`.
  bool is_export_entry(const Capability& entry, std::string_view symbol) const {
    if (!entry.tag()) return false;
    for (const auto& o : objects_) {
      if (auto it = o.exports.find(symbol); it != o.exports.end()) {
        return make_sentry(it->second) == entry || it->second == entry;
      }
    }
    return false;
  }

 private:
  static bool name_matches(std::string_view path, std::string_view name) {
    if (path == name) return true;
    const auto slash = path.rfind('/');
    const std::string_view base =
        slash == std::string_view::npos ? path : path.substr(slash + 1);
    if (base == name) return true;
    const auto stem = [](std::string_view s) { return s.substr(0, s.find('.')); };
    return !stem(name).empty() && stem(base) == stem(name);
  }

  const ObjEntry* find(std::string_view name) const {
    for (const auto& o : objects_) {
      if (name_matches(o.path, name)) return &o;
    }
    return nullptr;
  }

  Capability record_cap(Address record) const {
    return derive(private_, record, record + obj_layout::kSize, perms::kData);
  }

  Address bump(std::uint64_t len) {
    const Address at = cursor_;
    const std::uint64_t rounded = TaggedMemory::align_up(len);
    if (private_.top() - cursor_ < rounded) {
      throw Fault(Error::kOutOfMemory, "linker private region");
    }
    cursor_ += rounded;
    return at;
  }

  void store_u64(Address at, std::uint64_t v) {
    std::byte b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::byte>(v >> (8 * i));
    memory_->store_data(private_, at, b);
  }

  TaggedMemory* memory_;
  Capability authority_;
  Capability private_;
  Address cursor_;
  Capability sealer_;
  LinkerConfig config_;
  std::deque<ObjEntry> objects_;
  std::map<CompartmentId, std::map<std::string, Capability, std::less<>>> got_;
};

}  // namespace capsim

#endif  // CAPSIM_LINKER_HPP_
