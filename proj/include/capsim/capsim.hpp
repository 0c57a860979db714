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

#ifndef CAPSIM_CAPSIM_HPP_
#define CAPSIM_CAPSIM_HPP_

#include "capsim/allocator.hpp"
#include "capsim/attacks.hpp"
#include "capsim/capability.hpp"
#include "capsim/error.hpp"
#include "capsim/linker.hpp"
#include "capsim/machine.hpp"
#include "capsim/report.hpp"
#include "capsim/scanner.hpp"
#include "capsim/scenario.hpp"
#include "capsim/tagged_memory.hpp"

#endif  // CAPSIM_CAPSIM_HPP_
