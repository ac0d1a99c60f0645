#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsfr {

/// Shortest round-trip decimal form of a double ("inf"/"-inf"/"nan" for
/// non-finite values). Used everywhere a double is written to text so that
/// identical runs produce identical bytes.
std::string fmt_double(double v);

/// Inverse of fmt_double. Throws std::runtime_error on garbage.
double parse_double(const std::string& s);

long long parse_int(const std::string& s);

/// Run fn(i) for i in [0, n). With threads <= 1 this is a plain loop;
/// otherwise the range is split into contiguous chunks across workers.
/// fn must only write to per-index slots, so results are independent of
/// the thread count.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// Little-endian binary IO helpers.
void put_u16(std::string& out, std::uint16_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_f64(std::string& out, double v);

class ByteReader {
public:
    ByteReader(const std::string& buf) : buf_(buf) {}
    std::uint8_t get_u8();
    std::uint16_t get_u16();
    std::uint32_t get_u32();
    double get_f64();
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n);
    const std::string& buf_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace fedsfr
