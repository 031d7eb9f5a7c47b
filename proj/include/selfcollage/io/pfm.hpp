#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "selfcollage/core/image.hpp"

namespace selfcollage {

// Grayscale Portable Float Map ("Pf"). Scale is written as -1.0, i.e.
// little-endian samples, and scanlines are stored bottom-to-top per the
// format convention.
inline void write_pfm(const std::string& path, const ScalarMap& map) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_pfm: cannot open " + path);
    f << "Pf\n" << map.w << " " << map.h << "\n-1.0\n";
    std::vector<float> row(static_cast<std::size_t>(map.w));
    for (int y = map.h - 1; y >= 0; --y) {
        for (int x = 0; x < map.w; ++x) row[static_cast<std::size_t>(x)] = static_cast<float>(map.at(y, x));
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!f) throw IoError("write_pfm: write failed for " + path);
}

inline ScalarMap read_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_pfm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "Pf") throw IoError("read_pfm: not a grayscale PFM: " + path);
    int w = 0, h = 0;
    double scale = 0.0;
    f >> w >> h >> scale;
    f.get();  // single whitespace after the header
    if (w <= 0 || h <= 0) throw IoError("read_pfm: bad dimensions in " + path);
    if (scale >= 0.0) throw IoError("read_pfm: big-endian PFM not supported: " + path);
    ScalarMap map(h, w);
    std::vector<float> row(static_cast<std::size_t>(w));
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!f) throw IoError("read_pfm: truncated file " + path);
        for (int x = 0; x < w; ++x) map.at(y, x) = row[static_cast<std::size_t>(x)];
    }
    return map;
}

}  // namespace selfcollage
