#pragma once

#include <cstdint>
#include <vector>

#include "selfcollage/core/error.hpp"

namespace selfcollage {

struct ComponentLabels {
    std::vector<int> labels;      // h*w, 0 = background, components numbered from 1
    std::vector<int> sizes;       // sizes[i] = size of component i+1
    int count = 0;
};

// Connected components of a binary mask via BFS, row-major discovery order.
// connectivity is 4 or 8.
inline ComponentLabels label_components(const std::vector<std::uint8_t>& mask, int h, int w,
                                        int connectivity = 4) {
    if (static_cast<std::size_t>(h) * w != mask.size())
        throw InvalidInput("label_components: mask size mismatch");
    if (connectivity != 4 && connectivity != 8)
        throw InvalidInput("label_components: connectivity must be 4 or 8");
    ComponentLabels out;
    out.labels.assign(mask.size(), 0);
    std::vector<int> stack;
    const int dx4[] = {1, -1, 0, 0};
    const int dy4[] = {0, 0, 1, -1};
    const int dx8[] = {1, -1, 0, 0, 1, 1, -1, -1};
    const int dy8[] = {0, 0, 1, -1, 1, -1, 1, -1};
    const int* dx = connectivity == 4 ? dx4 : dx8;
    const int* dy = connectivity == 4 ? dy4 : dy8;
    const int ndir = connectivity;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int idx = y * w + x;
            if (!mask[static_cast<std::size_t>(idx)] || out.labels[static_cast<std::size_t>(idx)]) continue;
            ++out.count;
            int size = 0;
            stack.clear();
            stack.push_back(idx);
            out.labels[static_cast<std::size_t>(idx)] = out.count;
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                ++size;
                const int cy = cur / w, cx = cur % w;
                for (int d = 0; d < ndir; ++d) {
                    const int ny = cy + dy[d], nx = cx + dx[d];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    const int nidx = ny * w + nx;
                    if (mask[static_cast<std::size_t>(nidx)] && !out.labels[static_cast<std::size_t>(nidx)]) {
                        out.labels[static_cast<std::size_t>(nidx)] = out.count;
                        stack.push_back(nidx);
                    }
                }
            }
            out.sizes.push_back(size);
        }
    }
    return out;
}

}  // namespace selfcollage
