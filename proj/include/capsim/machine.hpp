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

#ifndef CAPSIM_MACHINE_HPP_
#define CAPSIM_MACHINE_HPP_

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "capsim/allocator.hpp"
#include "capsim/capability.hpp"
#include "capsim/error.hpp"
#include "capsim/linker.hpp"
#include "capsim/scanner.hpp"
#include "capsim/scenario.hpp"
#include "capsim/tagged_memory.hpp"

namespace capsim {

enum class Mitigation {
  kC18n,
  kSealDlopenHandles,
  kZeroOnFree,
  kPerCompartmentArenas,
  kRevocation,
  kClearStackOnReturn,
  kSealSecrets,
};

inline constexpr std::array<Mitigation, 7> kAllMitigations = {
    Mitigation::kC18n,          Mitigation::kSealDlopenHandles,
    Mitigation::kZeroOnFree,    Mitigation::kPerCompartmentArenas,
    Mitigation::kRevocation,    Mitigation::kClearStackOnReturn,
    Mitigation::kSealSecrets,
};

// Canonical names, also used as blocked_by values.
inline std::string_view mitigation_name(Mitigation m) {
  switch (m) {
    case Mitigation::kC18n: return "c18n";
    case Mitigation::kSealDlopenHandles: return "sealed_handle";
    case Mitigation::kZeroOnFree: return "zero_on_free";
    case Mitigation::kPerCompartmentArenas: return "arenas";
    case Mitigation::kRevocation: return "revocation";
    case Mitigation::kClearStackOnReturn: return "clear_stack_on_return";
    case Mitigation::kSealSecrets: return "seal_secrets";
  }
  return "unknown";
}

inline std::string valid_mitigation_names() {
  std::string out;
  for (Mitigation m : kAllMitigations) {
    if (!out.empty()) out += ", ";
    out += mitigation_name(m);
  }
  return out;
}

// Accepts the canonical names plus the long field spellings.
inline Mitigation mitigation_from_name(std::string_view name) {
  static constexpr std::pair<std::string_view, Mitigation> kAliases[] = {
      {"seal_dlopen_handles", Mitigation::kSealDlopenHandles},
      {"per_compartment_arenas", Mitigation::kPerCompartmentArenas},
  };
  for (Mitigation m : kAllMitigations) {
    if (mitigation_name(m) == name) return m;
  }
  for (const auto& [alias, m] : kAliases) {
    if (alias == name) return m;
  }
  throw Fault(Error::kConfigInvalid, "unknown mitigation '" + std::string(name) +
                                         "' (valid: " + valid_mitigation_names() +
                                         ")");
}

struct MitigationSet {
  bool c18n = false;
  bool seal_dlopen_handles = false;
  bool zero_on_free = false;
  bool per_compartment_arenas = false;
  bool revocation = false;
  bool clear_stack_on_return = false;
  bool seal_secrets = false;

  bool has(Mitigation m) const { return this->*field(m); }
  MitigationSet& set(Mitigation m, bool on = true) {
    this->*field(m) = on;
    return *this;
  }
  static MitigationSet of(std::initializer_list<Mitigation> ms) {
    MitigationSet s;
    for (Mitigation m : ms) s.set(m);
    return s;
  }
  static MitigationSet all() {
    MitigationSet s;
    for (Mitigation m : kAllMitigations) s.set(m);
    return s;
  }

  // Enabled names in canonical order.
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (Mitigation m : kAllMitigations) {
      if (has(m)) out.emplace_back(mitigation_name(m));
    }
    return out;
  }

  bool operator==(const MitigationSet&) const = default;

 private:
  static bool MitigationSet::*field(Mitigation m) {
    switch (m) {
      case Mitigation::kC18n: return &MitigationSet::c18n;
      case Mitigation::kSealDlopenHandles: return &MitigationSet::seal_dlopen_handles;
      case Mitigation::kZeroOnFree: return &MitigationSet::zero_on_free;
      case Mitigation::kPerCompartmentArenas: return &MitigationSet::per_compartment_arenas;
      case Mitigation::kRevocation: return &MitigationSet::revocation;
      case Mitigation::kClearStackOnReturn: return &MitigationSet::clear_stack_on_return;
      case Mitigation::kSealSecrets: return &MitigationSet::seal_secrets;
    }
    throw Fault(Error::kConfigInvalid, "mitigation out of range");
  }
};

struct MitigationOverride {
  Mitigation mitigation;
  bool enabled = true;
  bool operator==(const MitigationOverride&) const = default;
};

// "c18n" enables, "no-revocation" disables a profile default.
inline MitigationOverride parse_override(std::string_view token) {
  if (token.starts_with("no-")) {
    return {mitigation_from_name(token.substr(3)), false};
  }
  return {mitigation_from_name(token), true};
}

inline std::string override_name(const MitigationOverride& o) {
  return (o.enabled ? "" : "no-") + std::string(mitigation_name(o.mitigation));
}

inline MitigationSet apply_overrides(MitigationSet base,
                                     std::span<const MitigationOverride> overrides) {
  for (const auto& o : overrides) base.set(o.mitigation, o.enabled);
  return base;
}

struct PlatformProfile {
  std::string name;
  MitigationSet defaults;
  // Code capabilities handed to compartments are sentries.
  bool exec_caps_sealed = false;
  Permissions mapbase_perms;
  Permissions code_perms;
};

inline PlatformProfile morello_linux() {
  return {"morello-linux", MitigationSet{}, false, perms::kCodeExecutive,
          perms::kCodeExecutive};
}

inline PlatformProfile cheribsd() {
  return {"cheribsd", MitigationSet::of({Mitigation::kRevocation}), true,
          perms::kData, perms::kCode};
}

inline std::vector<std::string> profile_names() { return {"cheribsd", "morello-linux"}; }

inline PlatformProfile profile_by_name(std::string_view name) {
  if (name == "morello-linux") return morello_linux();
  if (name == "cheribsd") return cheribsd();
  throw Fault(Error::kConfigInvalid, "unknown profile '" + std::string(name) +
                                         "' (valid: cheribsd, morello-linux)");
}

// Region placement before the per-seed slide.
namespace layout {
inline constexpr Address kMainBase = 0xaaaa'aaaa'0000;
inline constexpr std::uint64_t kMainSize = 0x32000;
inline constexpr std::uint64_t kMainDataOffset = 0x20000;
inline constexpr std::uint64_t kMainEntryOffset = 0x1230;
// Slots inside the main data section.
inline constexpr std::uint64_t kFlagSlot = 0x00;
inline constexpr std::uint64_t kKeyPtrSlot = 0x40;
inline constexpr std::uint64_t kPrivPtrSlot = 0x80;

inline constexpr Address kLibcBase = 0x4013'0000;
inline constexpr std::uint64_t kLibcSize = 0x60700;
inline constexpr Address kRtldBase = 0x401a'0000;
inline constexpr Address kLibsslBase = 0x4020'9000;
inline constexpr std::uint64_t kLibsslSize = 0x668000;
inline constexpr Address kLibthrBase = 0x4103'2000;
inline constexpr std::uint64_t kLibthrSize = 0xc000;
inline constexpr std::uint64_t kLibthrWideSlot = 0x8140;

inline constexpr Address kSslHeapBase = 0x4140'0000;
inline constexpr std::uint64_t kSslHeapSize = 0x200000;
inline constexpr std::uint64_t kPemOffset = 0x179000;
inline constexpr std::uint64_t kWideCursorOffset = 0x154140;

inline constexpr Address kTrustedStackBase = 0x41c0'0000;
inline constexpr Address kUntrustedStackBase = 0x4240'0000;
inline constexpr std::uint64_t kIsolatedStackSize = 0x400000;

inline constexpr Address kHeapWindow = 0x5000'0000;
inline constexpr std::uint64_t kArenaSize = 0x800000;
inline constexpr std::uint64_t kArenaStride = 0x1000000;

inline constexpr Address kMaliciousBase = 0xffff'f7dd'f000;
inline constexpr std::uint64_t kMaliciousSize = 0x31000;
inline constexpr std::uint64_t kMaliciousEntryOffset = 0x108a4;

inline constexpr Address kSharedStackBase = 0xffff'f7e2'0000;
inline constexpr std::uint64_t kSharedStackSize = 0xc0000;

inline constexpr Address kGlobalsBase = 0xffff'f7ef'c000;
inline constexpr std::uint64_t kGlobalsSize = 0x1000;
inline constexpr std::uint64_t kSealerSlot = 0x100;

inline constexpr std::uint64_t kSlideUnit = 0x1000;
inline constexpr std::uint64_t kSlideSlots = 16;

// Otypes. The privdata sealer spans [0, 0x8000); the others sit above it.
inline constexpr OType kLinkerOtype = 0x9000;
inline constexpr OType kSecretOtype = 0xa000;

inline constexpr std::uint64_t kCallFrameSize = 0x100;
inline constexpr std::uint64_t kHelperFrameSize = 0x200;
inline constexpr std::size_t kMaxCallArgs = 8;
}  // namespace layout

inline constexpr CompartmentId kMainCompartment = 0;
inline constexpr CompartmentId kMaliciousCompartment = 1;

enum class Trust { kTrusted, kUntrusted };

struct Compartment {
  CompartmentId id = 0;
  std::string name;
  Trust trust = Trust::kTrusted;
  MappedRegion image;
  Capability code_cap;
  // Sentry through which other compartments call in.
  Capability entry;
  Capability stack_cap;
  Arena* arena = nullptr;
};

struct Frame {
  CompartmentId compartment = 0;
  AddressRange window;
  Address slot(std::size_t i) const { return window.base + TaggedMemory::kGranule * i; }
  bool operator==(const Frame&) const = default;
};

// Addresses and capabilities of the data planted for the scenario.
struct Fixtures {
  Capability flag;  // rwRW over the flag string
  std::optional<Capability> priv_sealed;
  Capability privdata_sealer;
  Address secret_addr = 0;
  AddressRange pem;
  AddressRange ssl_region;
};

class Machine;

// What the callee sees during call_compartment.
class CallContext {
 public:
  Machine& machine() const { return *machine_; }
  CompartmentId self() const { return self_; }
  const Frame& frame() const { return frame_; }
  const std::vector<Capability>& args() const { return args_; }
  const Capability& stack_cap() const;
  const Capability& code_cap() const;
  Capability got(std::string_view symbol) const;
  // Exactly the capabilities the callee starts with.
  std::vector<Capability> roots() const;

 private:
  friend class Machine;
  CallContext(Machine& m, CompartmentId self, Frame frame, std::vector<Capability> args)
      : machine_(&m), self_(self), frame_(frame), args_(std::move(args)) {}
  Machine* machine_;
  CompartmentId self_;
  Frame frame_;
  std::vector<Capability> args_;
};

// One process: tagged memory, a heap, a runtime linker and two compartments
// (the trusted main binary and an untrusted library). Scenario programs run
// on the host and touch simulated memory only through capabilities.
class Machine {
 public:
  static std::unique_ptr<Machine> build(const PlatformProfile& profile,
                                        const MitigationSet& mitigations,
                                        ScenarioKind scenario, std::uint64_t seed = 0) {
    return std::unique_ptr<Machine>(new Machine(profile, mitigations, scenario, seed));
  }

  Machine(const Machine&) = delete;
  Machine& operator=(const Machine&) = delete;

  const PlatformProfile& profile() const { return profile_; }
  const MitigationSet& mitigations() const { return mitigations_; }
  ScenarioKind scenario() const { return scenario_; }
  std::uint64_t seed() const { return seed_; }
  TaggedMemory& memory() { return memory_; }
  const TaggedMemory& memory() const { return memory_; }
  Heap& heap() { return *heap_; }
  const Heap& heap() const { return *heap_; }
  Linker& linker() { return *linker_; }
  const Linker& linker() const { return *linker_; }
  const Fixtures& fixtures() const { return fixtures_; }
  const std::vector<Frame>& frames() const { return frames_; }

  const Compartment& compartment(CompartmentId id) const {
    if (id >= compartments_.size()) throw Fault(Error::kConfigInvalid, "no compartment");
    return compartments_[id];
  }
  const std::vector<Compartment>& compartments() const { return compartments_; }

  // Backing region of the compartment's stack.
  MappedRegion stack_region(CompartmentId id) const {
    return stacks_[stack_of_.at(id)].region;
  }

  const ObjEntry& object(std::string_view name) const {
    for (const auto& o : linker_->objects()) {
      if (o.path == name) return o;
    }
    throw Fault(Error::kObjectNotFound, std::string(name));
  }

  // Memory no untrusted compartment should be able to name.
  std::vector<AddressRange> trusted_regions() const {
    std::vector<AddressRange> out = {
        compartments_[kMainCompartment].image.range(), globals_.range(),
        rtld_.range(), ssl_heap_.range()};
    for (const auto& o : linker_->objects()) {
      if (o.image != compartments_[kMaliciousCompartment].image) {
        out.push_back(o.image.range());
      }
    }
    if (mitigations_.c18n) out.push_back(stack_region(kMainCompartment).range());
    return RegionSet::normalize(std::move(out));
  }

  // True when `r` lies outside everything `c` legitimately owns: its image,
  // the range of its stack capability, and heap memory not handed to another
  // compartment.
  bool outside_compartment(CompartmentId c, const AddressRange& r) const {
    const Compartment& comp = compartment(c);
    if (comp.image.range().contains(r)) return false;
    if (range_of(comp.stack_cap).contains(r)) return false;
    for (const Arena* a : heap_->arenas()) {
      if (!a->region().range().contains(r)) continue;
      for (const auto& [base, live] : a->live()) {
        const AddressRange chunk{base, base + live.size};
        if (chunk.intersects(r) && live.requester != std::optional(c)) return true;
      }
      return false;
    }
    return true;
  }

  // Pushes a frame for the callee, spills the return link and the arguments
  // into it, runs `body`, then pops.
  template <class F>
  std::invoke_result_t<F, CallContext&> call_compartment(
      CompartmentId caller, const Capability& entry,
      std::span<const Capability> args, F&& body) {
    const Capability pcc = invoke_target(entry);
    const Compartment* callee = compartment_containing(pcc.address());
    if (callee == nullptr) throw Fault(Error::kNotInvocable, "no compartment at target");
    if (!holds(caller, entry)) {
      throw Fault(Error::kNotInvocable, "caller does not hold " + render(entry));
    }
    if (args.size() > layout::kMaxCallArgs) {
      throw Fault(Error::kConfigInvalid, "too many call arguments");
    }
    const Frame f = push_frame(callee->id, layout::kCallFrameSize);
    struct Pop {
      Machine* m;
      Frame f;
      ~Pop() { m->pop_frame(f); }
    } pop{this, f};

    const Capability& spill = stack_authority(callee->id);
    const Address link_slot = f.window.top - TaggedMemory::kGranule;
    memory_.store_cap(spill, link_slot, return_link(caller));
    std::vector<Capability> copied;
    for (std::size_t i = 0; i < args.size(); ++i) {
      const Address at = link_slot - TaggedMemory::kGranule * (i + 1);
      memory_.store_cap(spill, at, args[i]);
      copied.push_back(memory_.load_cap(spill, at));
    }
    CallContext ctx(*this, callee->id, f, std::move(copied));
    return std::invoke(std::forward<F>(body), ctx);
  }

  Frame push_frame(CompartmentId id, std::uint64_t size) {
    Stack& s = stacks_[stack_of_.at(id)];
    size = TaggedMemory::align_up(size);
    if (s.sp - s.region.base < size) throw Fault(Error::kOutOfMemory, "stack");
    s.sp -= size;
    frames_.push_back({id, {s.sp, s.sp + size}});
    return frames_.back();
  }

  // Frames pop in order. The bytes and tags stay behind unless
  // clear_stack_on_return is set.
  void pop_frame(const Frame& f) {
    if (frames_.empty() || frames_.back() != f) {
      throw Fault(Error::kConfigInvalid, "frame popped out of order");
    }
    Stack& s = stacks_[stack_of_.at(f.compartment)];
    if (mitigations_.clear_stack_on_return) {
      const std::vector<std::byte> zeros(f.window.length());
      memory_.store_data(s.authority, f.window.base, zeros);
    }
    s.sp = f.window.top;
    frames_.pop_back();
  }

  // A trusted helper that prints the flag: its frame keeps the flag pointer
  // and the libc function it called.
  void trusted_log_flag() {
    const Frame f = push_frame(kMainCompartment, layout::kHelperFrameSize);
    const Capability& spill = stack_authority(kMainCompartment);
    memory_.store_cap(spill, f.slot(0), fixtures_.flag);
    memory_.store_cap(spill, f.slot(1), libc_residue());
    pop_frame(f);
  }

  // A trusted helper that seals the private struct; the sealer is spilled
  // into its frame.
  void trusted_use_sealer() {
    if (scenario_ != ScenarioKind::kPrivdata) {
      throw Fault(Error::kConfigInvalid, "trusted_use_sealer needs privdata");
    }
    const Frame f = push_frame(kMainCompartment, layout::kHelperFrameSize);
    memory_.store_cap(stack_authority(kMainCompartment), f.slot(2),
                      fixtures_.privdata_sealer);
    pop_frame(f);
  }

  // Seals `cap` under the trusted secret otype when seal_secrets is on.
  // Applied to the capabilities that govern the private key.
  Capability guard_secret(const Capability& cap) const {
    return mitigations_.seal_secrets ? seal(cap, secret_sealer_) : cap;
  }

  // Entry points reached through GOT sentries.
  Capability dlopen(CompartmentId caller, const Capability& entry,
                    std::string_view name) const {
    require_entry(caller, entry, "dlopen");
    return linker_->dlopen(name);
  }

  Capability malloc(CompartmentId caller, std::uint64_t size) {
    require_entry(caller, linker_->got_resolve(caller, "malloc"), "malloc");
    return heap_->alloc(heap_->arena_for(caller), size, caller);
  }

  void free(CompartmentId caller, const Capability& chunk) {
    require_entry(caller, linker_->got_resolve(caller, "free"), "free");
    heap_->free(heap_->arena_for(caller), chunk);
  }

 private:
  struct Stack {
    MappedRegion region;
    Capability authority;
    Address sp = 0;
  };

  friend class CallContext;

  Machine(const PlatformProfile& profile, const MitigationSet& mitigations,
          ScenarioKind scenario, std::uint64_t seed)
      : profile_(profile), mitigations_(mitigations), scenario_(scenario), seed_(seed),
        root_(Capability::root(0, ~Address{0}, Permissions::all())) {
    if (profile.name != "morello-linux" && profile.name != "cheribsd") {
      throw Fault(Error::kConfigInvalid, "unknown profile '" + profile.name +
                                             "' (valid: cheribsd, morello-linux)");
    }
    std::mt19937_64 rng(seed);
    auto slide = [&](Address base) {
      if (seed == 0) return base;
      return base + (rng() % layout::kSlideSlots) * layout::kSlideUnit;
    };
    auto map = [&](Address base, std::uint64_t size) {
      return memory_.map_region(slide(base), size);
    };

    const MappedRegion main_image = map(layout::kMainBase, layout::kMainSize);
    const MappedRegion libc = map(layout::kLibcBase, layout::kLibcSize);
    rtld_ = map(layout::kRtldBase, Linker::kPrivateRegionSize);
    const MappedRegion libssl = map(layout::kLibsslBase, layout::kLibsslSize);
    const MappedRegion libthr = map(layout::kLibthrBase, layout::kLibthrSize);
    ssl_heap_ = map(layout::kSslHeapBase, layout::kSslHeapSize);
    const MappedRegion malicious = map(layout::kMaliciousBase, layout::kMaliciousSize);
    globals_ = map(layout::kGlobalsBase, layout::kGlobalsSize);
    const Address heap_window = slide(layout::kHeapWindow);

    if (mitigations_.c18n) {
      stacks_.push_back(make_stack(map(layout::kTrustedStackBase, layout::kIsolatedStackSize)));
      stacks_.push_back(
          make_stack(map(layout::kUntrustedStackBase, layout::kIsolatedStackSize)));
      stack_of_ = {{kMainCompartment, 0}, {kMaliciousCompartment, 1}};
    } else {
      stacks_.push_back(make_stack(map(layout::kSharedStackBase, layout::kSharedStackSize)));
      stack_of_ = {{kMainCompartment, 0}, {kMaliciousCompartment, 0}};
    }

    heap_ = std::make_unique<Heap>(
        memory_, root_,
        AllocatorPolicy{mitigations_.zero_on_free, mitigations_.per_compartment_arenas,
                        mitigations_.revocation},
        heap_window, layout::kArenaSize, layout::kArenaStride);
    const Capability linker_sealer =
        derive(root_, layout::kLinkerOtype, layout::kLinkerOtype + 1, perms::kSealer);
    secret_sealer_ =
        derive(root_, layout::kSecretOtype, layout::kSecretOtype + 1, perms::kSealer);
    linker_ = std::make_unique<Linker>(
        memory_, root_, rtld_, linker_sealer,
        LinkerConfig{mitigations_.seal_dlopen_handles, profile_.mapbase_perms});

    auto code = [&](const MappedRegion& image) {
      return derive(root_, image.base, image.top(), profile_.code_perms);
    };
    auto at = [](const Capability& c, std::uint64_t off) {
      return set_address(c, c.base() + off);
    };
    const Capability main_code = code(main_image);
    const Capability libc_code = code(libc);
    const Capability ssl_code = code(libssl);
    const Capability thr_code = code(libthr);
    const Capability mal_code = code(malicious);
    libc_code_ = libc_code;

    linker_->register_object("./bin/main", main_image,
                             {{"main", at(main_code, layout::kMainEntryOffset)}});
    linker_->register_object("/lib/libc.so.7", libc,
                             {{"dlopen", at(libc_code, 0x1a6c1)},
                              {"free", at(libc_code, 0x31201)},
                              {"malloc", at(libc_code, 0x31001)},
                              {"printf", at(libc_code, 0x22d61)},
                              {"puts", at(libc_code, 0x1ac11)}});
    linker_->register_object("/lib/libthr.so.3", libthr,
                             {{"pthread_create", at(thr_code, 0x4c01)}});
    linker_->register_object("/usr/lib/libssl.so.30", libssl,
                             {{"RSA_generate_key", at(ssl_code, 0x180521)}});
    linker_->register_object("./lib/libmalicious.so", malicious,
                             {{"malicious_library",
                               at(mal_code, layout::kMaliciousEntryOffset)}});

    for (const char* sym : {"dlopen", "free", "malloc", "printf", "malicious_library",
                            "RSA_generate_key"}) {
      linker_->link(kMainCompartment, sym);
    }
    for (const char* sym : {"dlopen", "free", "malloc", "printf", "puts"}) {
      linker_->link(kMaliciousCompartment, sym);
    }

    compartments_.push_back({kMainCompartment, "main", Trust::kTrusted, main_image,
                             at(main_code, layout::kMainEntryOffset),
                             make_sentry(at(main_code, layout::kMainEntryOffset)),
                             stack_cap_for(kMainCompartment), nullptr});
    compartments_.push_back(
        {kMaliciousCompartment, "libmalicious", Trust::kUntrusted, malicious,
         at(mal_code, layout::kMaliciousEntryOffset),
         make_sentry(at(mal_code, layout::kMaliciousEntryOffset)),
         stack_cap_for(kMaliciousCompartment), nullptr});
    for (auto& c : compartments_) c.arena = &heap_->arena_for(c.id);

    // main()'s own frame, live for the whole run.
    const Frame main_frame = push_frame(kMainCompartment, layout::kCallFrameSize);
    memory_.store_cap(stack_authority(kMainCompartment),
                      main_frame.window.top - TaggedMemory::kGranule,
                      make_sentry(at(libc_code, 0x10)));

    plant_fixtures(main_image, libthr);
  }

  Stack make_stack(const MappedRegion& region) {
    return {region, derive(root_, region.base, region.top(), perms::kData), region.top()};
  }

  Capability stack_cap_for(CompartmentId id) const {
    const Stack& s = stacks_[stack_of_.at(id)];
    return set_address(s.authority, s.sp);
  }

  const Capability& stack_authority(CompartmentId id) const {
    return stacks_[stack_of_.at(id)].authority;
  }

  void plant_fixtures(const MappedRegion& main_image, const MappedRegion& libthr) {
    const Address data = main_image.base + layout::kMainDataOffset;
    const Capability main_rw = derive(root_, main_image.base, main_image.top(), perms::kData);

    const Address flag_at = data + layout::kFlagSlot;
    std::vector<std::byte> flag(fixtures::kFlag.size() + 1);
    for (std::size_t i = 0; i < fixtures::kFlag.size(); ++i) {
      flag[i] = static_cast<std::byte>(fixtures::kFlag[i]);
    }
    memory_.store_data(main_rw, flag_at, flag);
    fixtures_.flag = derive(root_, flag_at, flag_at + 0x20, perms::kData);

    fixtures_.privdata_sealer = derive(root_, 0, fixtures::kPrivdataSealerTop, perms::kSealer);
    if (scenario_ == ScenarioKind::kPrivdata) {
      const Capability globals_rw =
          derive(root_, globals_.base, globals_.top(), perms::kData);
      std::byte secret[4];
      for (int i = 0; i < 4; ++i) {
        secret[i] = static_cast<std::byte>(fixtures::kPrivdataSecret >> (8 * i));
      }
      memory_.store_data(globals_rw, globals_.base, secret);
      const Capability priv =
          derive(root_, globals_.base, globals_.base + fixtures::kPrivdataStructSize,
                 perms::kData);
      fixtures_.secret_addr = globals_.base;
      fixtures_.priv_sealed = seal(priv, fixtures_.privdata_sealer);
      memory_.store_cap(globals_rw, globals_.base + layout::kSealerSlot,
                        fixtures_.privdata_sealer);
      memory_.store_cap(main_rw, data + layout::kPrivPtrSlot, *fixtures_.priv_sealed);
    }

    fixtures_.ssl_region = ssl_heap_.range();
    if (scenario_ == ScenarioKind::kSslPoc) {
      const Capability heap_rw = derive(root_, ssl_heap_.base, ssl_heap_.top(), perms::kData);
      const Address pem_at = ssl_heap_.base + layout::kPemOffset;
      const std::string pem = fixtures::pem_fixture();
      std::vector<std::byte> text(pem.size() + 1);
      for (std::size_t i = 0; i < pem.size(); ++i) text[i] = static_cast<std::byte>(pem[i]);
      memory_.store_data(heap_rw, pem_at, text);
      fixtures_.pem = {pem_at, pem_at + pem.size()};

      const Capability narrow =
          derive(root_, pem_at, pem_at + fixtures::kPemSlotSize, perms::kData);
      memory_.store_cap(main_rw, data + layout::kKeyPtrSlot, guard_secret(narrow));
      // A thread library that kept a pointer into the heap page it used.
      const Capability wide =
          set_address(heap_rw, ssl_heap_.base + layout::kWideCursorOffset);
      const Capability thr_rw = derive(root_, libthr.base, libthr.top(), perms::kData);
      memory_.store_cap(thr_rw, libthr.base + layout::kLibthrWideSlot, guard_secret(wide));
    }
  }

  // The libc function pointer a trusted helper leaves behind: a plain code
  // capability on morello-linux, a sentry where exec caps are sealed.
  Capability libc_residue() const {
    if (profile_.exec_caps_sealed) {
      return make_sentry(set_address(libc_code_, libc_code_.base() + 0x22d61));
    }
    return libc_code_;
  }

  Capability return_link(CompartmentId caller) const {
    const Capability& code = compartments_.at(caller).code_cap;
    return make_sentry(set_address(code, code.address() + 0x40));
  }

  const Compartment* compartment_containing(Address a) const {
    for (const auto& c : compartments_) {
      if (c.image.range().contains(a)) return &c;
    }
    return nullptr;
  }

  bool holds(CompartmentId caller, const Capability& entry) const {
    return linker_->got_contains(caller, entry);
  }

  void require_entry(CompartmentId caller, const Capability& entry,
                     std::string_view symbol) const {
    invoke_target(entry);
    if (!linker_->is_export_entry(entry, symbol) || !holds(caller, entry)) {
      throw Fault(Error::kNotInvocable, std::string(symbol) + " entry not held");
    }
  }

  PlatformProfile profile_;
  MitigationSet mitigations_;
  ScenarioKind scenario_;
  std::uint64_t seed_;
  TaggedMemory memory_;
  Capability root_;
  Capability secret_sealer_;
  Capability libc_code_;
  MappedRegion rtld_;
  MappedRegion ssl_heap_;
  MappedRegion globals_;
  std::unique_ptr<Heap> heap_;
  std::unique_ptr<Linker> linker_;
  std::vector<Stack> stacks_;
  std::map<CompartmentId, std::size_t> stack_of_;
  std::vector<Compartment> compartments_;
  std::vector<Frame> frames_;
  Fixtures fixtures_;
};

inline const Capability& CallContext::stack_cap() const {
  return machine_->compartment(self_).stack_cap;
}

inline const Capability& CallContext::code_cap() const {
  return machine_->compartment(self_).code_cap;
}

inline Capability CallContext::got(std::string_view symbol) const {
  return machine_->linker().got_resolve(self_, symbol);
}

inline std::vector<Capability> CallContext::roots() const {
  std::vector<Capability> out = {stack_cap(), code_cap()};
  for (const Capability& c : machine_->linker().got_entries(self_)) out.push_back(c);
  out.insert(out.end(), args_.begin(), args_.end());
  return out;
}

inline std::unique_ptr<Machine> build_machine(const PlatformProfile& profile,
                                              std::span<const MitigationOverride> overrides,
                                              ScenarioKind scenario, std::uint64_t seed = 0) {
  return Machine::build(profile, apply_overrides(profile.defaults, overrides), scenario,
                        seed);
}

}  // namespace capsim

#endif  // CAPSIM_MACHINE_HPP_
