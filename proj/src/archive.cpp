// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/archive.hpp"

#include <algorithm>
#include <fstream>

#include "mofe/errors.hpp"

namespace mofe {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                       static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

// Little-endian readers; `consumed` tracks bytes taken from the stream so
// inspect can prove it never reached the payload.
struct Reader {
  std::istream& is;
  std::uint64_t consumed = 0;

  void bytes(void* dst, std::size_t n, const std::string& what) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
      throw FormatError("archive truncated while reading " + what);
    }
    consumed += n;
  }

  std::uint32_t u32(const std::string& what) {
    std::uint8_t b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t u64(const std::string& what) {
    std::uint64_t v = 0;
    std::uint8_t b[8];
    bytes(b, 8, what);
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
};

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

ArchiveListing read_index(Reader& r, std::uint64_t file_size) {
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, TensorArchive::kMagic, 4) != 0) {
    throw FormatError("bad magic: not a tensor archive");
  }
  ArchiveListing listing;
  listing.file_size = file_size;
  listing.version = r.u32("version");
  if (listing.version != TensorArchive::kVersion) {
    throw FormatError("unsupported archive version " + std::to_string(listing.version) + " (expected " +
                      std::to_string(TensorArchive::kVersion) + ")");
  }
  const std::uint32_t count = r.u32("tensor count");
  listing.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    std::uint32_t name_len = r.u32("name length");
    if (name_len == 0 || name_len > (1u << 16)) throw FormatError("implausible tensor name length");
    e.name.resize(name_len);
    r.bytes(e.name.data(), name_len, "tensor name");
    std::uint8_t dtype_code = 0, rank = 0;
    r.bytes(&dtype_code, 1, "dtype of " + e.name);
    e.dtype = dtype_from_code(dtype_code);
    r.bytes(&rank, 1, "rank of " + e.name);
    e.dims.resize(rank);
    for (std::uint8_t d = 0; d < rank; ++d) e.dims[d] = r.u64("dims of " + e.name);
    e.offset = r.u64("offset of " + e.name);
    e.length = r.u64("length of " + e.name);
    listing.entries.push_back(std::move(e));
  }

  // Index validation: unique names, in-bounds non-overlapping payloads,
  // length consistent with dims and dtype.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (std::size_t i = 0; i < listing.entries.size(); ++i) {
    const auto& e = listing.entries[i];
    for (std::size_t j = i + 1; j < listing.entries.size(); ++j) {
      if (listing.entries[j].name == e.name) throw FormatError("duplicate tensor name: " + e.name);
    }
    std::uint64_t expected = shape_numel(e.dims) * dtype_size(e.dtype);
    if (e.length != expected) {
      throw FormatError("tensor " + e.name + ": length " + std::to_string(e.length) +
                        " does not match dims (expected " + std::to_string(expected) + ")");
    }
    if (e.offset % TensorArchive::kAlignment != 0) {
      throw FormatError("tensor " + e.name + ": misaligned offset " + std::to_string(e.offset));
    }
    if (e.offset > file_size || e.offset + e.length > file_size) {
      throw FormatError("tensor " + e.name + ": payload extends past end of file");
    }
    if (e.length > 0) ranges.emplace_back(e.offset, e.offset + e.length);
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) throw FormatError("overlapping tensor payloads in index");
  }
  listing.bytes_read = r.consumed;
  return listing;
}

std::uint64_t stream_size(std::istream& is) {
  is.seekg(0, std::ios::end);
  auto end = is.tellg();
  is.seekg(0, std::ios::beg);
  return static_cast<std::uint64_t>(end);
}

}  // namespace

void TensorArchive::put(const std::string& name, RawTensor tensor) {
  if (name.empty()) throw FormatError("tensor name must be nonempty");
  std::uint64_t expected = shape_numel(tensor.dims) * dtype_size(tensor.dtype);
  if (tensor.bytes.size() != expected) {
    throw FormatError("tensor " + name + ": payload size " + std::to_string(tensor.bytes.size()) +
                      " does not match dims");
  }
  tensors_[name] = std::move(tensor);
}

const RawTensor& TensorArchive::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw StructuralError("archive has no tensor named " + name);
  return it->second;
}

void save_archive(const TensorArchive& archive, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);

  // Index size is computable up front, so payload offsets are assigned
  // before anything is written.
  std::uint64_t index_end = 4 + 4 + 4;
  for (const auto& [name, t] : archive.tensors()) {
    index_end += 4 + name.size() + 1 + 1 + 8 * t.dims.size() + 8 + 8;
  }
  std::vector<std::uint64_t> offsets;
  std::uint64_t cursor = index_end;
  for (const auto& [name, t] : archive.tensors()) {
    cursor = align_up(cursor, TensorArchive::kAlignment);
    offsets.push_back(cursor);
    cursor += t.bytes.size();
  }

  os.write(TensorArchive::kMagic, 4);
  write_u32(os, TensorArchive::kVersion);
  write_u32(os, static_cast<std::uint32_t>(archive.size()));
  std::size_t i = 0;
  for (const auto& [name, t] : archive.tensors()) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    std::uint8_t dtype_code = static_cast<std::uint8_t>(t.dtype);
    std::uint8_t rank = static_cast<std::uint8_t>(t.dims.size());
    os.write(reinterpret_cast<const char*>(&dtype_code), 1);
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (std::size_t d : t.dims) write_u64(os, d);
    write_u64(os, offsets[i]);
    write_u64(os, t.bytes.size());
    ++i;
  }
  std::uint64_t pos = index_end;
  i = 0;
  for (const auto& [name, t] : archive.tensors()) {
    while (pos < offsets[i]) {
      os.put('\0');
      ++pos;
    }
    os.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
    pos += t.bytes.size();
    ++i;
  }
  if (!os) throw IoError("write failed: " + path);
}

TensorArchive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::uint64_t file_size = stream_size(is);
  Reader r{is};
  ArchiveListing listing = read_index(r, file_size);

  TensorArchive archive;
  for (const auto& e : listing.entries) {
    RawTensor t;
    t.dtype = e.dtype;
    t.dims = e.dims;
    t.bytes.resize(e.length);
    is.seekg(static_cast<std::streamoff>(e.offset));
    is.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(e.length));
    if (static_cast<std::uint64_t>(is.gcount()) != e.length) {
      throw FormatError("archive truncated in payload of tensor " + e.name);
    }
    archive.put(e.name, std::move(t));
  }
  return archive;
}

ArchiveListing inspect_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::uint64_t file_size = stream_size(is);
  Reader r{is};
  return read_index(r, file_size);
}

}  // namespace mofe
