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

#ifndef CAPSIM_ATTACKS_HPP_
#define CAPSIM_ATTACKS_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "capsim/capability.hpp"
#include "capsim/error.hpp"
#include "capsim/linker.hpp"
#include "capsim/machine.hpp"
#include "capsim/scanner.hpp"
#include "capsim/scenario.hpp"

namespace capsim {

struct ScenarioOutcome {
  std::string attack;
  // The attacker reached memory outside its compartment.
  bool escaped = false;
  std::optional<std::string> secret_recovered;
  std::size_t caps_outside_compartment = 0;
  std::vector<std::string> evidence;
  std::optional<std::string> blocked_by;

  bool operator==(const ScenarioOutcome&) const = default;
};

struct ScavengeOptions {
  std::size_t max_iterations = 1'000'000;
};

struct HeapStoreOptions {
  std::size_t rounds = 220000;
  bool trusted_allocates = true;
};

namespace detail {

inline Capability library_entry(const Machine& m) {
  return m.linker().got_resolve(kMainCompartment, "malicious_library");
}

// What the main binary does before it calls into the library.
inline void prepare_trusted_state(Machine& m) {
  m.trusted_log_flag();
  if (m.scenario() == ScenarioKind::kPrivdata) m.trusted_use_sealer();
}

// Counts and renders the closure entries that point outside `self`.
// Sealed entries are evidence but not counted: they cannot be dereferenced.
inline void assess(const Machine& m, CompartmentId self, const RegionSet& set,
                   ScenarioOutcome& out) {
  for (const auto& e : set.entries()) {
    if (m.outside_compartment(self, e.range())) {
      ++out.caps_outside_compartment;
      out.evidence.push_back(render(e.cap));
    }
  }
  for (const auto& e : set.opaque()) {
    if (m.outside_compartment(self, range_of(e.cap))) {
      out.evidence.push_back(render(e.cap));
    }
  }
}

// Reads a NUL-terminated string at `at`, never past `cap`'s top.
inline std::string read_c_string(const TaggedMemory& memory, const Capability& cap,
                                 Address at, std::size_t max_len = 0x4000) {
  if (at >= cap.top()) return {};
  const std::uint64_t len = std::min<std::uint64_t>(cap.top() - at, max_len);
  std::string out;
  for (std::byte b : memory.load_data(cap, at, len)) {
    if (b == std::byte{0}) break;
    out.push_back(static_cast<char>(b));
  }
  return out;
}

inline std::optional<std::string> find_flag(const Machine& m, const RegionSet& set) {
  for (const ByteHit& hit : search_bytes(set, m.memory(), fixtures::kFlagPrefix)) {
    std::string s = read_c_string(m.memory(), hit.governing, hit.address, 64);
    if (s.find('}') != std::string::npos) return s;
  }
  return std::nullopt;
}

inline void finalize(const Machine& m, ScenarioOutcome& out,
                     std::initializer_list<Mitigation> candidates) {
  out.escaped = out.caps_outside_compartment > 0 || out.secret_recovered.has_value();
  if (out.escaped || out.blocked_by) return;
  for (Mitigation c : candidates) {
    if (m.mitigations().has(c)) {
      out.blocked_by = std::string(mitigation_name(c));
      return;
    }
  }
}

}  // namespace detail

// Scans the stack the library was given. On a shared stack this includes
// frames the main binary left behind.
inline ScenarioOutcome attack_stack_walk(Machine& m) {
  detail::prepare_trusted_state(m);
  std::vector<Capability> args;
  if (m.fixtures().priv_sealed) args.push_back(*m.fixtures().priv_sealed);
  return m.call_compartment(
      kMainCompartment, detail::library_entry(m), args, [&](CallContext& ctx) {
        ScenarioOutcome out;
        out.attack = "stack_walk";
        const TaggedMemory& mem = m.memory();
        RegionSet closure = scan_recursive(ctx.stack_cap(), mem).regions;
        for (const Capability& a : ctx.args()) scan_into(closure, a, mem);
        detail::assess(m, ctx.self(), closure, out);

        const Permissions sealing(Permissions::kSeal | Permissions::kUnseal);
        for (const FoundCap& key : find_caps_with_perms(closure, mem, sealing)) {
          out.evidence.push_back(render_verbose(key.cap));
          for (const auto& e : closure.opaque()) {
            if (e.cap.seal_state().kind() != SealState::Kind::kSealed) continue;
            const OType otype = e.cap.seal_state().otype();
            if (!key.cap.in_bounds(otype, 1)) continue;
            const Capability opened = unseal(e.cap, set_address(key.cap, otype));
            const auto bytes = mem.load_data(opened, opened.base(), 4);
            std::uint32_t v = 0;
            for (int i = 3; i >= 0; --i) v = (v << 8) | std::to_integer<std::uint32_t>(bytes[i]);
            out.evidence.push_back(render(opened));
            out.secret_recovered = hex_padded(v, 8);
          }
          if (out.secret_recovered) break;
        }
        if (!out.secret_recovered) out.secret_recovered = detail::find_flag(m, closure);
        detail::finalize(m, out, {Mitigation::kC18n, Mitigation::kClearStackOnReturn});
        return out;
      });
}

namespace detail {

// dlopen() a library the attacker already links against and follow the
// returned record. Returns nullopt after recording the fault when the handle
// cannot be dereferenced.
inline std::optional<RegionSet> infoleak_closure(Machine& m, CallContext& ctx,
                                                 ScenarioOutcome& out) {
  const TaggedMemory& mem = m.memory();
  const Capability handle = m.dlopen(ctx.self(), ctx.got("dlopen"), "libc");
  try {
    load_obj_field(mem, handle, obj_layout::kMapbase);
  } catch (const Fault& f) {
    out.evidence.push_back(render(handle));
    if (f.code() == Error::kSealedCapability) out.blocked_by = "sealed_handle";
    return std::nullopt;
  }
  Capability head = handle;
  while (auto prev = obj_prev(mem, head)) head = *prev;
  RegionSet set;
  for (std::optional<Capability> cur = head; cur; cur = obj_next(mem, *cur)) {
    scan_into(set, load_obj_field(mem, *cur, obj_layout::kMapbase), mem);
  }
  scan_into(set, handle, mem);
  return set;
}

}  // namespace detail

// Walks the runtime linker's object list from a dlopen() handle and scans
// every mapped object.
inline ScenarioOutcome attack_dlopen_infoleak(Machine& m) {
  detail::prepare_trusted_state(m);
  return m.call_compartment(
      kMainCompartment, detail::library_entry(m), {}, [&](CallContext& ctx) {
        ScenarioOutcome out;
        out.attack = "dlopen_infoleak";
        if (auto set = detail::infoleak_closure(m, ctx, out)) {
          detail::assess(m, ctx.self(), *set, out);
          out.secret_recovered = detail::find_flag(m, *set);
        }
        detail::finalize(m, out, {Mitigation::kSealDlopenHandles});
        return out;
      });
}

// Reallocates heap memory the main binary freed and harvests the
// capabilities it left there.
inline ScenarioOutcome attack_heap_scavenge(Machine& m, ScavengeOptions opts = {}) {
  detail::prepare_trusted_state(m);
  {
    const Capability chunk = m.malloc(kMainCompartment, 0x20);
    m.memory().store_cap(chunk, chunk.base(), m.fixtures().flag);
    constexpr std::string_view kMarker = "trusted";
    std::vector<std::byte> marker(kMarker.size() + 1);
    std::transform(kMarker.begin(), kMarker.end(), marker.begin(),
                   [](char c) { return static_cast<std::byte>(c); });
    m.memory().store_data(chunk, chunk.base() + 0x10, marker);
    m.free(kMainCompartment, chunk);
  }
  return m.call_compartment(
      kMainCompartment, detail::library_entry(m), {}, [&](CallContext& ctx) {
        ScenarioOutcome out;
        out.attack = "heap_scavenge";
        const TaggedMemory& mem = m.memory();
        RegionSet set;
        bool found = false;
        for (std::size_t i = 0; i < opts.max_iterations && !found; ++i) {
          const Capability chunk = m.malloc(ctx.self(), 0x10);
          const Capability leaked = mem.load_cap(chunk, chunk.base());
          if (leaked.tag()) {
            scan_into(set, leaked, mem);
            found = true;
          }
          m.free(ctx.self(), chunk);
        }
        detail::assess(m, ctx.self(), set, out);
        out.secret_recovered = detail::find_flag(m, set);
        detail::finalize(m, out, {Mitigation::kZeroOnFree, Mitigation::kPerCompartmentArenas});
        return out;
      });
}

// Keeps capabilities to chunks after freeing them and reads them again once
// the main binary has reused the memory.
inline ScenarioOutcome attack_heap_store(Machine& m, HeapStoreOptions opts = {}) {
  detail::prepare_trusted_state(m);
  const Capability entry = detail::library_entry(m);
  const Capability list = m.call_compartment(
      kMainCompartment, entry, {}, [&](CallContext& ctx) {
        const Capability heap_list =
            m.malloc(ctx.self(), TaggedMemory::kGranule * opts.rounds);
        for (std::size_t i = 0; i < opts.rounds; ++i) {
          const Capability chunk = m.malloc(ctx.self(), 0x10);
          m.memory().store_cap(heap_list, heap_list.base() + TaggedMemory::kGranule * i,
                               chunk);
          m.free(ctx.self(), chunk);
        }
        return heap_list;
      });

  // Unrelated trusted work. Long enough to end a revocation epoch.
  for (std::uint64_t i = 0; i < m.heap().policy().quarantine_epoch_len; ++i) {
    m.free(kMainCompartment, m.malloc(kMainCompartment, 0x10));
  }

  if (opts.trusted_allocates) {
    // The binary asks the library for a buffer; the library allocates it
    // from its own heap and hands it over.
    const Capability buffer = m.call_compartment(
        kMainCompartment, entry, {}, [&](CallContext& ctx) {
          return m.heap().alloc(m.heap().arena_for(ctx.self()), 0x10, kMainCompartment);
        });
    std::vector<std::byte> text(fixtures::kFlag.size() + 1);
    std::transform(fixtures::kFlag.begin(), fixtures::kFlag.end(), text.begin(),
                   [](char c) { return static_cast<std::byte>(c); });
    m.memory().store_data(buffer, buffer.base(), text);
  }

  return m.call_compartment(kMainCompartment, entry, {}, [&](CallContext& ctx) {
    ScenarioOutcome out;
    out.attack = "heap_store";
    const TaggedMemory& mem = m.memory();
    std::vector<Capability> seen;
    for (std::size_t i = 0; i < opts.rounds; ++i) {
      const Capability saved = mem.load_cap(list, list.base() + TaggedMemory::kGranule * i);
      if (!saved.tag()) continue;
      if (std::find(seen.begin(), seen.end(), saved) != seen.end()) continue;
      seen.push_back(saved);
      if (!m.outside_compartment(ctx.self(), range_of(saved))) continue;
      ++out.caps_outside_compartment;
      out.evidence.push_back(render(saved));
      std::string s = detail::read_c_string(mem, saved, saved.base());
      if (s.starts_with(fixtures::kFlagPrefix)) out.secret_recovered = s;
    }
    detail::finalize(m, out, {Mitigation::kRevocation});
    return out;
  });
}

// The dlopen infoleak followed by a search for a PEM private key anywhere in
// the reachable memory.
inline ScenarioOutcome run_ssl_poc(Machine& m) {
  detail::prepare_trusted_state(m);
  return m.call_compartment(
      kMainCompartment, detail::library_entry(m), {}, [&](CallContext& ctx) {
        ScenarioOutcome out;
        out.attack = "ssl_poc";
        auto set = detail::infoleak_closure(m, ctx, out);
        if (set) {
          const TaggedMemory& mem = m.memory();
          for (const ByteHit& hit : search_bytes(*set, mem, fixtures::kPemNeedle)) {
            Address start = hit.address;
            if (start >= hit.governing.base() + 5) {
              const auto dashes = mem.load_data(hit.governing, start - 5, 5);
              if (std::all_of(dashes.begin(), dashes.end(),
                              [](std::byte b) { return b == std::byte{'-'}; })) {
                start -= 5;
              }
            }
            std::string key = detail::read_c_string(mem, hit.governing, start);
            if (key.size() < fixtures::kMinKeyLength) continue;
            out.secret_recovered = std::move(key);
            for (const auto& e : set->entries()) {
              if (e.range().contains(start) && m.outside_compartment(ctx.self(), e.range())) {
                ++out.caps_outside_compartment;
                out.evidence.push_back(render(e.cap));
              }
            }
            break;
          }
          if (!out.secret_recovered) {
            // Sealed capabilities that cover the key region.
            for (const auto& e : set->opaque()) {
              if (range_of(e.cap).intersects(m.fixtures().ssl_region)) {
                out.evidence.push_back(render(e.cap));
              }
            }
          }
        }
        detail::finalize(m, out, {Mitigation::kSealDlopenHandles, Mitigation::kSealSecrets});
        return out;
      });
}

enum class AttackKind { kStackWalk, kDlopenInfoleak, kHeapScavenge, kHeapStore, kSslPoc };

// A runnable scenario: one attack against one set of planted fixtures.
struct ScenarioDef {
  std::string_view name;
  AttackKind attack;
  ScenarioKind fixture;
};

inline constexpr ScenarioDef kScenarios[] = {
    {"dlopen_infoleak", AttackKind::kDlopenInfoleak, ScenarioKind::kFlag},
    {"heap_scavenge", AttackKind::kHeapScavenge, ScenarioKind::kFlag},
    {"heap_store", AttackKind::kHeapStore, ScenarioKind::kFlag},
    {"privdata", AttackKind::kStackWalk, ScenarioKind::kPrivdata},
    {"ssl_poc", AttackKind::kSslPoc, ScenarioKind::kSslPoc},
    {"stack_walk", AttackKind::kStackWalk, ScenarioKind::kFlag},
};

// What "all" expands to.
inline constexpr std::string_view kCoreAttacks[] = {"dlopen_infoleak", "heap_scavenge",
                                                    "heap_store", "stack_walk"};

inline const ScenarioDef& scenario_def(std::string_view name) {
  for (const auto& d : kScenarios) {
    if (d.name == name) return d;
  }
  std::string valid;
  for (const auto& d : kScenarios) valid += (valid.empty() ? "" : ", ") + std::string(d.name);
  throw Fault(Error::kConfigInvalid,
              "unknown scenario '" + std::string(name) + "' (valid: all, " + valid + ")");
}

inline ScenarioOutcome run_attack(AttackKind kind, Machine& m) {
  switch (kind) {
    case AttackKind::kStackWalk: return attack_stack_walk(m);
    case AttackKind::kDlopenInfoleak: return attack_dlopen_infoleak(m);
    case AttackKind::kHeapScavenge: return attack_heap_scavenge(m);
    case AttackKind::kHeapStore: return attack_heap_store(m);
    case AttackKind::kSslPoc: return run_ssl_poc(m);
  }
  throw Fault(Error::kConfigInvalid, "attack out of range");
}

// Builds a fresh machine for the scenario and runs it.
inline ScenarioOutcome run_scenario(std::string_view name, const PlatformProfile& profile,
                                    const MitigationSet& mitigations, std::uint64_t seed = 0) {
  const ScenarioDef& def = scenario_def(name);
  auto m = Machine::build(profile, mitigations, def.fixture, seed);
  return run_attack(def.attack, *m);
}

}  // namespace capsim

#endif  // CAPSIM_ATTACKS_HPP_
