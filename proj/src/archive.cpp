/*
 * Copyright 2026 The ltlab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "ltlab/archive.hpp"

#include <bit>
#include <fstream>
#include <limits>
#include <sstream>

#include "ltlab/error.hpp"

namespace ltlab {

namespace {

constexpr std::size_t kMaxRank = 16;

void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        out.push_back(char((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    [[noreturn]] void fail(const std::string& what) const
    {
        throw ValidationError("archive: " + what + " at byte offset " + std::to_string(pos_));
    }

    void need(std::size_t n, const char* what) const
    {
        if (remaining() < n)
            fail(std::string("truncated ") + what + " (need " + std::to_string(n) + " bytes, have "
                 + std::to_string(remaining()) + ")");
    }

    std::uint32_t u32(const char* what)
    {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64(const char* what)
    {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::string_view take(std::size_t n, const char* what)
    {
        need(n, what);
        const std::string_view s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

template <typename T>
void put_header(std::string& out, const std::string& name, std::uint32_t dtype, const BasicTensor<T>& t)
{
    if (name.size() > std::numeric_limits<std::uint32_t>::max())
        throw ValidationError("archive entry name too long");
    put_u32(out, std::uint32_t(name.size()));
    out.append(name);
    put_u32(out, dtype);
    put_u32(out, std::uint32_t(t.rank()));
    for (std::size_t e : t.shape())
        put_u64(out, e);
}

} // namespace

std::string serialize_archive(const Archive& archive)
{
    std::string out = "LTKT";
    put_u32(out, kArchiveVersion);
    put_u32(out, std::uint32_t(archive.size()));
    for (const auto& [name, value] : archive) {
        if (const auto* f = std::get_if<Tensor>(&value)) {
            put_header(out, name, kDtypeF32, *f);
            out.reserve(out.size() + 4 * f->size());
            for (float v : f->data())
                put_u32(out, std::bit_cast<std::uint32_t>(v));
        } else {
            const auto& b = std::get<ByteTensor>(value);
            put_header(out, name, kDtypeU8, b);
            out.append(reinterpret_cast<const char*>(b.data().data()), b.size());
        }
    }
    return out;
}

Archive parse_archive(std::string_view bytes)
{
    Reader r(bytes);
    if (r.take(4, "magic") != "LTKT")
        throw ValidationError("archive: bad magic at byte offset 0");
    const std::size_t version_at = r.offset();
    const std::uint32_t version = r.u32("version");
    if (version != kArchiveVersion)
        throw ValidationError("archive: unsupported version " + std::to_string(version) + " at byte offset "
                              + std::to_string(version_at));
    const std::uint32_t count = r.u32("entry count");
    Archive out;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::size_t entry_at = r.offset();
        const std::uint32_t name_len = r.u32("name length");
        std::string name(r.take(name_len, "entry name"));
        const std::uint32_t dtype = r.u32("dtype");
        if (dtype != kDtypeF32 && dtype != kDtypeU8)
            r.fail("unknown dtype code " + std::to_string(dtype));
        const std::uint32_t rank = r.u32("rank");
        if (rank > kMaxRank)
            r.fail("rank " + std::to_string(rank) + " exceeds limit");
        Shape shape;
        std::uint64_t volume = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint64_t extent = r.u64("extent");
            if (extent == 0)
                r.fail("zero extent in entry '" + name + "'");
            if (volume > std::numeric_limits<std::uint64_t>::max() / extent)
                r.fail("extent product overflows in entry '" + name + "'");
            volume *= extent;
            shape.push_back(std::size_t(extent));
        }
        const std::uint64_t width = dtype == kDtypeF32 ? 4 : 1;
        if (volume > r.remaining() / width)
            r.fail("truncated payload for entry '" + name + "' (need " + std::to_string(volume * width)
                   + " bytes, have " + std::to_string(r.remaining()) + ")");
        const std::string_view payload = r.take(std::size_t(volume * width), "payload");
        if (out.contains(name))
            throw ValidationError("archive: duplicate entry name '" + name + "' at byte offset "
                                  + std::to_string(entry_at));
        if (dtype == kDtypeF32) {
            std::vector<float> data(volume);
            for (std::size_t i = 0; i < data.size(); ++i) {
                std::uint32_t v = 0;
                for (int b = 0; b < 4; ++b)
                    v |= std::uint32_t(std::uint8_t(payload[4 * i + b])) << (8 * b);
                data[i] = std::bit_cast<float>(v);
            }
            out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
        } else {
            std::vector<std::uint8_t> data(payload.begin(), payload.end());
            out.emplace(std::move(name), ByteTensor(std::move(shape), std::move(data)));
        }
    }
    if (r.remaining() != 0)
        r.fail("trailing bytes after last entry");
    return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw RuntimeFailure("cannot open '" + tmp.string() + "' for writing");
        f.write(bytes.data(), std::streamsize(bytes.size()));
        if (!f)
            throw RuntimeFailure("write to '" + tmp.string() + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw ValidationError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void save_archive(const std::filesystem::path& path, const Archive& archive)
{
    write_file_atomic(path, serialize_archive(archive));
}

Archive load_archive(const std::filesystem::path& path)
{
    try {
        return parse_archive(read_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

const Tensor& archive_tensor(const Archive& archive, const std::string& name)
{
    auto it = archive.find(name);
    if (it == archive.end())
        throw ValidationError("archive has no entry '" + name + "'");
    if (const auto* t = std::get_if<Tensor>(&it->second))
        return *t;
    throw ValidationError("archive entry '" + name + "' is not a float tensor");
}

const ByteTensor& archive_bytes(const Archive& archive, const std::string& name)
{
    auto it = archive.find(name);
    if (it == archive.end())
        throw ValidationError("archive has no entry '" + name + "'");
    if (const auto* t = std::get_if<ByteTensor>(&it->second))
        return *t;
    throw ValidationError("archive entry '" + name + "' is not a byte tensor");
}

} // namespace ltlab
