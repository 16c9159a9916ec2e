#include "ucmnet/palette.hpp"

#include <set>

#include "ucmnet/common.hpp"

namespace ucmnet {

const Palette& token_palette() {
  static const Palette palette = [] {
    Palette p{};
    std::set<uint32_t> used;
    uint64_t counter = 0x70616c65747465ull;  // stream tag, any fixed value works
    for (auto& color : p) {
      while (true) {
        const uint64_t x = splitmix64(counter++);
        const auto r = static_cast<uint8_t>(x & 0xff);
        const auto g = static_cast<uint8_t>((x >> 8) & 0xff);
        const auto b = static_cast<uint8_t>((x >> 16) & 0xff);
        const uint32_t key = (static_cast<uint32_t>(r) << 16) | (static_cast<uint32_t>(g) << 8) | b;
        if (used.insert(key).second) {
          color = {r, g, b};
          break;
        }
      }
    }
    return p;
  }();
  return palette;
}

}  // namespace ucmnet
