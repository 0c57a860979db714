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


#include "capsim/linker.hpp"

#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "capsim/capability.hpp"
#include "capsim/error.hpp"
#include "capsim/scanner.hpp"
#include "capsim/tagged_memory.hpp"

namespace capsim {
namespace {

const Capability kRoot = Capability::root(0, ~Address{0}, Permissions::all());
constexpr OType kLinkerOtype = 0x9000;

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

class LinkerTest : public ::testing::Test {
 protected:
  Linker make(bool seal_handles, Permissions mapbase = perms::kCodeExecutive) {
    const MappedRegion priv = mem.map_region(0x401a0000, Linker::kPrivateRegionSize);
    return Linker(mem, kRoot, priv,
                  derive(kRoot, kLinkerOtype, kLinkerOtype + 1, perms::kSealer),
                  {seal_handles, mapbase});
  }

  MappedRegion image(Address base, std::uint64_t size) { return mem.map_region(base, size); }

  Capability code(const MappedRegion& r, std::uint64_t off) {
    return set_address(derive(kRoot, r.base, r.top(), perms::kCode), r.base + off);
  }

  // Paths in list order, starting from `entry` and walking back to the head.
  std::vector<std::string> walk(Capability entry) {
    while (auto prev = obj_prev(mem, entry)) entry = *prev;
    std::vector<std::string> out;
    for (std::optional<Capability> cur = entry; cur; cur = obj_next(mem, *cur)) {
      out.push_back(obj_path(mem, *cur));
    }
    return out;
  }

  TaggedMemory mem;
};

TEST_F(LinkerTest, TraversalVisitsEveryObject) {
  Linker l = make(false);
  l.register_object("/lib/libc.so.7", image(0x40130000, 0x60700));
  l.register_object("/usr/lib/libssl.so.30", image(0x40209000, 0x668000));
  l.register_object("./bin/main", image(0xaaaaaaaa0000, 0x32000));
  EXPECT_EQ(walk(l.dlopen("libc")),
            (std::vector<std::string>{"/lib/libc.so.7", "/usr/lib/libssl.so.30", "./bin/main"}));
  EXPECT_EQ(walk(l.dlopen("./bin/main")).size(), 3u);
}

TEST_F(LinkerTest, SingleObjectListEndsImmediately) {
  Linker l = make(false);
  l.register_object("/lib/libc.so.7", image(0x40130000, 0x60700));
  const Capability h = l.dlopen("libc.so.7");
  EXPECT_FALSE(obj_next(mem, h).has_value());
  EXPECT_FALSE(obj_prev(mem, h).has_value());
}

TEST_F(LinkerTest, DuplicatePathRejected) {
  Linker l = make(false);
  l.register_object("/lib/libc.so.7", image(0x40130000, 0x1000));
  EXPECT_EQ(fault_of([&] { l.register_object("/lib/libc.so.7", image(0x50000000, 0x1000)); }),
            Error::kDuplicateObject);
}

TEST_F(LinkerTest, MapbaseCoversWholeImage) {
  Linker l = make(false);
  l.register_object("./bin/main", image(0xaaaaaaaa0000, 0x32000));
  const Capability mapbase = load_obj_field(mem, l.dlopen("main"), obj_layout::kMapbase);
  EXPECT_TRUE(mapbase.tag());
  EXPECT_EQ(render(mapbase), "0xaaaaaaaa0000 [rxRE,0xaaaaaaaa0000-0xaaaaaaad2000]");
}

TEST_F(LinkerTest, CheribsdConfigMapbaseIsReadWrite) {
  Linker l = make(false, perms::kData);
  l.register_object("/lib/libthr.so.3", image(0x41032000, 0xc000));
  const Capability mapbase = load_obj_field(mem, l.dlopen("libthr"), obj_layout::kMapbase);
  EXPECT_EQ(render(mapbase), "0x41032000 [rwRW,0x41032000-0x4103e000]");
}

TEST_F(LinkerTest, RecordScalarsReadable) {
  Linker l = make(false);
  l.register_object("/lib/libc.so.7", image(0x40130000, 0x60700));
  const Capability h = l.dlopen("libc");
  const auto bytes = mem.load_data(h, h.address() + obj_layout::kMapsize, 8);
  std::uint64_t size = 0;
  for (int i = 7; i >= 0; --i) size = (size << 8) | std::to_integer<std::uint64_t>(bytes[i]);
  EXPECT_EQ(size, 0x60700u);
}

TEST_F(LinkerTest, SealedHandleFaultsOnEveryLoad) {
  Linker l = make(true);
  l.register_object("/lib/libc.so.7", image(0x40130000, 0x60700));
  const Capability h = l.dlopen("libc");
  EXPECT_EQ(h.seal_state().otype(), kLinkerOtype);
  EXPECT_EQ(fault_of([&] { load_obj_field(mem, h, obj_layout::kMapbase); }),
            Error::kSealedCapability);
  EXPECT_EQ(fault_of([&] { mem.load_data(h, h.address(), 1); }), Error::kSealedCapability);
  EXPECT_EQ(fault_of([&] { obj_next(mem, h); }), Error::kSealedCapability);
  EXPECT_EQ(l.open_handle(h), l.open_handle(l.dlopen("libc")));
  EXPECT_FALSE(l.open_handle(h).is_sealed());
}

TEST_F(LinkerTest, UnknownObject) {
  Linker l = make(false);
  EXPECT_EQ(fault_of([&] { l.dlopen("nonexistent"); }), Error::kObjectNotFound);
}

TEST_F(LinkerTest, GotResolvesSentriesForLinkedSymbolsOnly) {
  Linker l = make(false);
  const MappedRegion libc = image(0x40130000, 0x60700);
  l.register_object("/lib/libc.so.7", libc,
                    {{"dlopen", code(libc, 0x1a6c1)}, {"system", code(libc, 0x3000)}});
  l.link(1, "dlopen");
  const Capability dl = l.got_resolve(1, "dlopen");
  EXPECT_TRUE(dl.is_sentry());
  EXPECT_EQ(dl.address(), 0x40130000u + 0x1a6c1);
  EXPECT_EQ(fault_of([&] { set_address(dl, libc.base); }), Error::kSealedCapability);
  EXPECT_EQ(fault_of([&] { l.got_resolve(1, "system"); }), Error::kUnlinkedSymbol);
  EXPECT_EQ(fault_of([&] { l.got_resolve(2, "dlopen"); }), Error::kUnlinkedSymbol);
  EXPECT_EQ(fault_of([&] { l.link(1, "nosuch"); }), Error::kUnlinkedSymbol);
  EXPECT_TRUE(l.is_export_entry(dl, "dlopen"));
  EXPECT_FALSE(l.is_export_entry(dl, "system"));
  EXPECT_TRUE(l.got_contains(1, dl));
  EXPECT_EQ(l.got_entries(1).size(), 1u);
}

TEST_F(LinkerTest, HandleClosureReachesEveryImage) {
  Linker l = make(false);
  const std::vector<MappedRegion> images = {image(0x40130000, 0x60700),
                                            image(0x41032000, 0xc000),
                                            image(0xaaaaaaaa0000, 0x32000)};
  l.register_object("/lib/libc.so.7", images[0]);
  l.register_object("/lib/libthr.so.3", images[1]);
  l.register_object("./bin/main", images[2]);
  const auto closure = scan_recursive(l.dlopen("libthr"), mem);
  const auto uni = closure.regions.range_union();
  for (const auto& img : images) {
    EXPECT_TRUE(std::any_of(uni.begin(), uni.end(),
                            [&](const AddressRange& r) { return r.contains(img.range()); }))
        << hex(img.base);
  }
}

TEST_F(LinkerTest, SealedHandleClosureIsEmpty) {
  Linker l = make(true);
  l.register_object("/lib/libc.so.7", image(0x40130000, 0x60700));
  const auto closure = scan_recursive(l.dlopen("libc"), mem);
  EXPECT_TRUE(closure.regions.range_union().empty());
  EXPECT_TRUE(closure.regions.entries().empty());
}

}  // namespace
}  // namespace capsim
