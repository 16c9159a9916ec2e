#pragma once

// Fixed 256-color palette for token-usage maps. Colors are derived from
// splitmix64 so every build paints token k the same way, and duplicates are
// skipped so distinct tokens stay distinguishable.

#include <array>
#include <cstdint>

namespace ucmnet {

using Palette = std::array<std::array<uint8_t, 3>, 256>;

const Palette& token_palette();

}  // namespace ucmnet
