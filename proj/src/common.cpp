#include "fiberlearn/common.hpp"
#include "fiberlearn/parallel.hpp"

#include <algorithm>
#include <bit>
#include <ostream>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace fiberlearn {

Volume4D::Volume4D(std::size_t x, std::size_t y, std::size_t z, std::size_t c)
    : dims{x, y, z, c}, data(x * y * z * c, 0.0f) {}

void Volume4D::validate() const {
    for (auto d : dims) {
        if (d == 0) throw FormatError("volume has a zero dimension");
    }
    const std::size_t expected = dims[0] * dims[1] * dims[2] * dims[3];
    if (data.size() != expected) {
        throw FormatError("volume data length " + std::to_string(data.size()) +
                          " does not match dims product " + std::to_string(expected));
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw FormatError("volume contains a non-finite value at flat index " + std::to_string(i));
        }
    }
}

std::uint64_t fnv1a64(const void* bytes, std::size_t size, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex(std::uint64_t value) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << value;
    return os.str();
}

void write_floats_le(std::ostream& out, const float* values, std::size_t count) {
    constexpr std::size_t chunk = 1 << 16;
    std::vector<unsigned char> buf;
    for (std::size_t s = 0; s < count; s += chunk) {
        const std::size_t e = std::min(count, s + chunk);
        buf.resize(4 * (e - s));
        for (std::size_t i = s; i < e; ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(values[i]);
            unsigned char* p = buf.data() + 4 * (i - s);
            p[0] = static_cast<unsigned char>(bits);
            p[1] = static_cast<unsigned char>(bits >> 8);
            p[2] = static_cast<unsigned char>(bits >> 16);
            p[3] = static_cast<unsigned char>(bits >> 24);
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
}

void decode_floats_le(const unsigned char* bytes, float* values, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* p = bytes + 4 * i;
        const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                   (static_cast<std::uint32_t>(p[2]) << 16) |
                                   (static_cast<std::uint32_t>(p[3]) << 24);
        values[i] = std::bit_cast<float>(bits);
    }
}

double axial_angle(const Vec3& a, const Vec3& b) {
    return std::acos(std::min(1.0, std::abs(a.dot(b))));
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng child_rng(std::uint64_t master_seed, std::uint64_t index) {
    const std::uint64_t a = splitmix64(master_seed);
    const std::uint64_t b = splitmix64(a ^ splitmix64(index + 0x632be59bd9b4e019ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return Rng(seq);
}

void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
    if (count == 0) return;
    const std::size_t workers =
        std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
    if (workers == 1) {
        fn(0, count);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(count, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace fiberlearn
