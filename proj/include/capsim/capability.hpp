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

#ifndef CAPSIM_CAPABILITY_HPP_
#define CAPSIM_CAPABILITY_HPP_

#include <charconv>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "capsim/error.hpp"

namespace capsim {

using Address = std::uint64_t;
using OType = std::uint64_t;

// Lowercase hex without leading zeros, e.g. 0x40195cc0.
inline std::string hex(std::uint64_t v) {
  char buf[24] = {'0', 'x'};
  auto res = std::to_chars(buf + 2, buf + sizeof buf, v, 16);
  return std::string(buf, res.ptr);
}

// Zero-padded lowercase hex without prefix.
inline std::string hex_padded(std::uint64_t v, int width) {
  char buf[24];
  auto res = std::to_chars(buf, buf + sizeof buf, v, 16);
  std::string digits(buf, res.ptr);
  if (static_cast<int>(digits.size()) < width) {
    digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  }
  return digits;
}

class Permissions {
 public:
  enum Bit : std::uint16_t {
    kLoad = 1u << 0,
    kStore = 1u << 1,
    kExecute = 1u << 2,
    kLoadCap = 1u << 3,
    kStoreCap = 1u << 4,
    kExecutive = 1u << 5,
    kSeal = 1u << 6,
    kUnseal = 1u << 7,
    kGlobal = 1u << 8,
  };
  static constexpr std::uint16_t kAllBits = 0x1ff;

  constexpr Permissions() = default;
  constexpr explicit Permissions(std::uint16_t bits) : bits_(bits & kAllBits) {}

  static constexpr Permissions none() { return Permissions(); }
  static constexpr Permissions all() { return Permissions(kAllBits); }

  // Parses the letters used by render() plus s (seal), u (unseal) and
  // G (global). Unknown letters are rejected.
  static Permissions parse(std::string_view letters) {
    std::uint16_t bits = 0;
    for (char c : letters) {
      switch (c) {
        case 'r': bits |= kLoad; break;
        case 'w': bits |= kStore; break;
        case 'x': bits |= kExecute; break;
        case 'R': bits |= kLoadCap; break;
        case 'W': bits |= kStoreCap; break;
        case 'E': bits |= kExecutive; break;
        case 's': bits |= kSeal; break;
        case 'u': bits |= kUnseal; break;
        case 'G': bits |= kGlobal; break;
        default:
          throw Fault(Error::kConfigInvalid,
                      "unknown permission letter '" + std::string(1, c) + "'");
      }
    }
    return Permissions(bits);
  }

  constexpr std::uint16_t bits() const { return bits_; }
  constexpr bool has(Bit b) const { return (bits_ & b) != 0; }
  constexpr bool load() const { return has(kLoad); }
  constexpr bool store() const { return has(kStore); }
  constexpr bool execute() const { return has(kExecute); }
  constexpr bool load_cap() const { return has(kLoadCap); }
  constexpr bool store_cap() const { return has(kStoreCap); }
  constexpr bool seal() const { return has(kSeal); }
  constexpr bool unseal() const { return has(kUnseal); }
  constexpr bool global() const { return has(kGlobal); }

  // True when every permission in `other` is also present here.
  constexpr bool contains(Permissions other) const {
    return (other.bits_ & ~bits_) == 0;
  }

  constexpr Permissions operator|(Permissions o) const {
    return Permissions(static_cast<std::uint16_t>(bits_ | o.bits_));
  }
  constexpr Permissions operator&(Permissions o) const {
    return Permissions(static_cast<std::uint16_t>(bits_ & o.bits_));
  }
  constexpr Permissions without(Permissions o) const {
    return Permissions(static_cast<std::uint16_t>(bits_ & ~o.bits_));
  }
  constexpr bool operator==(const Permissions&) const = default;

  // Short form used in capability listings: r w x R W E, in that order.
  std::string to_string() const {
    std::string s;
    if (load()) s += 'r';
    if (store()) s += 'w';
    if (execute()) s += 'x';
    if (load_cap()) s += 'R';
    if (store_cap()) s += 'W';
    if (has(kExecutive)) s += 'E';
    return s;
  }

  // 18-slot mask in the style of the Morello SDK capability dump, e.g.
  // "G---------su------" for a global sealing key.
  std::string to_mask() const {
    std::string m(18, '-');
    if (global()) m[0] = 'G';
    if (has(kExecutive)) m[1] = 'E';
    if (seal()) m[10] = 's';
    if (unseal()) m[11] = 'u';
    if (store_cap()) m[13] = 'W';
    if (load_cap()) m[14] = 'R';
    if (execute()) m[15] = 'x';
    if (store()) m[16] = 'w';
    if (load()) m[17] = 'r';
    return m;
  }

 private:
  std::uint16_t bits_ = 0;
};

namespace perms {
inline constexpr Permissions kNone{};
inline constexpr Permissions kData = Permissions(
    Permissions::kLoad | Permissions::kStore | Permissions::kLoadCap |
    Permissions::kStoreCap | Permissions::kGlobal);
inline constexpr Permissions kReadOnly =
    Permissions(Permissions::kLoad | Permissions::kLoadCap | Permissions::kGlobal);
inline constexpr Permissions kCodeExecutive = Permissions(
    Permissions::kLoad | Permissions::kExecute | Permissions::kLoadCap |
    Permissions::kExecutive | Permissions::kGlobal);
inline constexpr Permissions kCode = Permissions(
    Permissions::kLoad | Permissions::kExecute | Permissions::kLoadCap |
    Permissions::kGlobal);
inline constexpr Permissions kSealer = Permissions(
    Permissions::kSeal | Permissions::kUnseal | Permissions::kGlobal);
}  // namespace perms

class SealState {
 public:
  enum class Kind : std::uint8_t { kUnsealed = 0, kSealed = 1, kSentry = 2 };

  constexpr SealState() = default;
  static constexpr SealState unsealed() { return SealState(); }
  static constexpr SealState sealed(OType otype) {
    return SealState(Kind::kSealed, otype);
  }
  static constexpr SealState sentry() { return SealState(Kind::kSentry, 0); }

  constexpr Kind kind() const { return kind_; }
  constexpr OType otype() const { return otype_; }
  constexpr bool is_unsealed() const { return kind_ == Kind::kUnsealed; }
  constexpr bool operator==(const SealState&) const = default;

 private:
  constexpr SealState(Kind k, OType t) : kind_(k), otype_(t) {}
  Kind kind_ = Kind::kUnsealed;
  OType otype_ = 0;
};

class TaggedMemory;

// A bounded, permissioned pointer. Copies are cheap; every operation that
// changes a capability returns a new value and leaves the input untouched.
// The tag is the validity bit: an untagged capability is just 128 bits of
// data and authorizes nothing. The offset is implicit (address - base).
class Capability {
 public:
  // The null capability: untagged, all zero.
  constexpr Capability() = default;

  // Boot-time authority. Only machine construction and tests create these;
  // everything else is derived from one.
  static constexpr Capability root(Address base, Address top, Permissions p) {
    return Capability(base, base, top, p, SealState::unsealed(), true);
  }

  // An untagged value with arbitrary fields, e.g. the decoding of plain data.
  static constexpr Capability untagged(Address address, Address base,
                                       Address top, Permissions p,
                                       SealState seal = SealState::unsealed()) {
    return Capability(address, base, top, p, seal, false);
  }

  constexpr Address address() const { return address_; }
  constexpr Address base() const { return base_; }
  constexpr Address top() const { return top_; }
  constexpr std::uint64_t length() const { return top_ - base_; }
  constexpr std::uint64_t offset() const { return address_ - base_; }
  constexpr Permissions perms() const { return perms_; }
  constexpr SealState seal_state() const { return seal_; }
  constexpr bool tag() const { return tag_; }
  constexpr bool is_sealed() const { return !seal_.is_unsealed(); }
  constexpr bool is_sentry() const {
    return seal_.kind() == SealState::Kind::kSentry;
  }

  // [addr, addr + len) lies inside [base, top).
  constexpr bool in_bounds(Address addr, std::uint64_t len) const {
    return addr >= base_ && addr <= top_ && len <= top_ - addr;
  }

  constexpr Capability without_tag() const {
    Capability c = *this;
    c.tag_ = false;
    return c;
  }

  constexpr bool operator==(const Capability&) const = default;

 private:
  friend class TaggedMemory;
  friend Capability derive(const Capability&, Address, Address, Permissions);
  friend Capability set_address(const Capability&, Address);
  friend Capability restrict_perms(const Capability&, Permissions);
  friend Capability seal(const Capability&, const Capability&);
  friend Capability unseal(const Capability&, const Capability&);
  friend Capability make_sentry(const Capability&);
  friend Capability invoke_target(const Capability&);

  constexpr Capability(Address address, Address base, Address top,
                       Permissions p, SealState seal, bool tag)
      : address_(address), base_(base), top_(top), perms_(p), seal_(seal),
        tag_(tag) {}

  Address address_ = 0;
  Address base_ = 0;
  Address top_ = 0;
  Permissions perms_{};
  SealState seal_{};
  bool tag_ = false;
};

namespace detail {
inline void require_mutable(const Capability& c) {
  if (!c.tag()) throw Fault(Error::kInvalidCapability);
  if (c.is_sealed()) throw Fault(Error::kSealedCapability);
}
}  // namespace detail

// Narrows `parent` to [new_base, new_top) with `new_perms`. Address is set to
// new_base.
inline Capability derive(const Capability& parent, Address new_base,
                         Address new_top, Permissions new_perms) {
  detail::require_mutable(parent);
  if (new_base < parent.base() || new_base > new_top || new_top > parent.top()) {
    throw Fault(Error::kBoundsEscalation,
                "[" + hex(new_base) + "," + hex(new_top) + ") outside [" +
                    hex(parent.base()) + "," + hex(parent.top()) + ")");
  }
  if (!parent.perms().contains(new_perms)) {
    throw Fault(Error::kPermissionEscalation);
  }
  return Capability(new_base, new_base, new_top, new_perms,
                    SealState::unsealed(), true);
}

// Moves the cursor. Out-of-bounds values are representable; dereferencing
// them faults.
inline Capability set_address(const Capability& cap, Address addr) {
  detail::require_mutable(cap);
  Capability c = cap;
  c.address_ = addr;
  return c;
}

inline Capability restrict_perms(const Capability& cap, Permissions keep) {
  detail::require_mutable(cap);
  Capability c = cap;
  c.perms_ = cap.perms() & keep;
  return c;
}

// The object type is the sealer's current address.
inline Capability seal(const Capability& target, const Capability& sealer) {
  if (!target.tag() || !sealer.tag()) throw Fault(Error::kInvalidCapability);
  if (target.is_sealed()) throw Fault(Error::kAlreadySealed);
  if (sealer.is_sealed()) throw Fault(Error::kSealedCapability, "sealer");
  if (!sealer.perms().seal()) throw Fault(Error::kMissingSealPermission);
  if (!sealer.in_bounds(sealer.address(), 1)) {
    throw Fault(Error::kOutOfBounds, "sealer address outside otype range");
  }
  Capability c = target;
  c.seal_ = SealState::sealed(sealer.address());
  return c;
}

inline Capability unseal(const Capability& target, const Capability& unsealer) {
  if (!target.tag() || !unsealer.tag()) throw Fault(Error::kInvalidCapability);
  if (target.seal_state().kind() != SealState::Kind::kSealed) {
    throw Fault(Error::kNotSealed);
  }
  if (unsealer.is_sealed()) throw Fault(Error::kSealedCapability, "unsealer");
  if (!unsealer.perms().unseal()) throw Fault(Error::kMissingUnsealPermission);
  if (!unsealer.in_bounds(unsealer.address(), 1)) {
    throw Fault(Error::kOutOfBounds, "unsealer address outside otype range");
  }
  if (unsealer.address() != target.seal_state().otype()) {
    throw Fault(Error::kOtypeMismatch,
                "key " + hex(unsealer.address()) + " vs otype " +
                    hex(target.seal_state().otype()));
  }
  Capability c = target;
  c.seal_ = SealState::unsealed();
  return c;
}

inline Capability make_sentry(const Capability& cap) {
  if (!cap.tag()) throw Fault(Error::kInvalidCapability);
  if (cap.is_sealed()) throw Fault(Error::kAlreadySealed);
  if (!cap.perms().execute()) throw Fault(Error::kNotExecutable);
  Capability c = cap;
  c.seal_ = SealState::sentry();
  return c;
}

// What a branch through `cap` would install as the program counter
// capability. Sentries unseal on invocation; sealed data never does.
inline Capability invoke_target(const Capability& cap) {
  if (!cap.tag() || !cap.perms().execute()) throw Fault(Error::kNotInvocable);
  if (cap.seal_state().kind() == SealState::Kind::kSealed) {
    throw Fault(Error::kNotInvocable, "sealed non-entry capability");
  }
  Capability pcc = cap;
  pcc.seal_ = SealState::unsealed();
  return pcc;
}

// "0x40195cc0 [rwRW,0x40195cc0-0x40195d20] (sealed)"
inline std::string render(const Capability& cap) {
  std::string s = hex(cap.address());
  s += " [";
  s += cap.perms().to_string();
  s += ',';
  s += hex(cap.base());
  s += '-';
  s += hex(cap.top());
  s += ']';
  switch (cap.seal_state().kind()) {
    case SealState::Kind::kSealed: s += " (sealed)"; break;
    case SealState::Kind::kSentry: s += " (sentry)"; break;
    case SealState::Kind::kUnsealed: break;
  }
  if (!cap.tag()) s += " (invalid)";
  return s;
}

// Long form: padded address, tag bit, half-open bounds and the permission
// mask, e.g. "0000000000000000 1 [0000000000000000:0000000000008000)
// G---------su------".
inline std::string render_verbose(const Capability& cap) {
  std::string s = hex_padded(cap.address(), 16);
  s += cap.tag() ? " 1 [" : " 0 [";
  s += hex_padded(cap.base(), 16);
  s += ':';
  s += hex_padded(cap.top(), 16);
  s += ") ";
  s += cap.perms().to_mask();
  return s;
}

}  // namespace capsim

#endif  // CAPSIM_CAPABILITY_HPP_
