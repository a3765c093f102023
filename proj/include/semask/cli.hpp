// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "semask/model_config.hpp"

namespace semask {

/// train | eval | infer | analyze | count | synth. Returns the process exit
/// status; usage errors print help to `err` and return nonzero.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Fixed colour for class c: golden-ratio hue stepping. The ignore label is black.
std::array<std::uint8_t, 3> class_color(std::int32_t label);

/// Parameter/FLOP table for `presets` at `resolution` x `resolution`.
std::string count_table(const std::vector<std::string>& presets, Index num_classes,
                        Index resolution);

}  // namespace semask
