#include "cardioseg/components.hpp"

#include <cstdlib>
#include <stdexcept>

namespace cardioseg {

std::uint32_t Components::largest() const {
    std::uint32_t best = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k)
        if (best == 0 || sizes[k] > sizes[best - 1]) best = static_cast<std::uint32_t>(k + 1);
    return best;
}

std::vector<Coord3> neighbour_offsets(Connectivity connectivity) {
    std::vector<Coord3> out;
    const bool planar = connectivity == Connectivity::Slice4 || connectivity == Connectivity::Slice8;
    for (std::int64_t dz = planar ? 0 : -1; dz <= (planar ? 0 : 1); ++dz)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
            for (std::int64_t dx = -1; dx <= 1; ++dx) {
                const auto manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0) continue;
                if ((connectivity == Connectivity::Slice4 || connectivity == Connectivity::Volume6) && manhattan > 1)
                    continue;
                out.push_back({dx, dy, dz});
            }
    return out;
}

Components label_components(std::span<const std::uint8_t> binary, Extent3 dims, Connectivity connectivity) {
    if (binary.size() != dims.count()) throw std::invalid_argument("label_components: size does not match dims");
    const auto offsets = neighbour_offsets(connectivity);
    Components c;
    c.labels.assign(binary.size(), 0);
    std::vector<std::size_t> stack;

    const auto X = static_cast<std::int64_t>(dims.x), Y = static_cast<std::int64_t>(dims.y),
               Z = static_cast<std::int64_t>(dims.z);
    for (std::size_t seed = 0; seed < binary.size(); ++seed) {
        if (!binary[seed] || c.labels[seed]) continue;
        const auto id = static_cast<std::uint32_t>(c.sizes.size() + 1);
        std::size_t size = 0;
        c.labels[seed] = id;
        stack.push_back(seed);
        while (!stack.empty()) {
            const std::size_t v = stack.back();
            stack.pop_back();
            ++size;
            const auto x = static_cast<std::int64_t>(v % dims.x);
            const auto y = static_cast<std::int64_t>((v / dims.x) % dims.y);
            const auto z = static_cast<std::int64_t>(v / (dims.x * dims.y));
            for (const Coord3& o : offsets) {
                const std::int64_t nx = x + o.x, ny = y + o.y, nz = z + o.z;
                if (nx < 0 || ny < 0 || nz < 0 || nx >= X || ny >= Y || nz >= Z) continue;
                const auto n = static_cast<std::size_t>(nx + X * (ny + Y * nz));
                if (binary[n] && !c.labels[n]) {
                    c.labels[n] = id;
                    stack.push_back(n);
                }
            }
        }
        c.sizes.push_back(size);
    }
    return c;
}

}  // namespace cardioseg
