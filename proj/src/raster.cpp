#include "logo/raster.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "logo/common.hpp"

namespace logo::img {

double sample_bilinear(const Image& im, double x, double y, int ch) {
  const double fx = x - 0.5, fy = y - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const int xi = x0 + dx, yi = y0 + dy;
      if (!im.inside(xi, yi)) continue;
      const double w = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
      acc += w * im.at(xi, yi, ch);
    }
  return acc;
}

// ---------------- crc32 / adler32 ----------------

static uint32_t crc_table_entry(uint32_t n) {
  uint32_t c = n;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
  return c;
}

static uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) table[i] = crc_table_entry(i);
    init = true;
  }
  crc ^= 0xffffffffu;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

static uint32_t adler32(const uint8_t* data, size_t n) {
  uint32_t a = 1, b = 0;
  for (size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

// ---------------- png encode ----------------

static void put_u32be(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

static void put_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& payload) {
  put_u32be(out, static_cast<uint32_t>(payload.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32be(out, crc32(out.data() + start, out.size() - start));
}

std::vector<uint8_t> encode_png(const Image& im) {
  require(im.c == 1 || im.c == 3, "png: only gray or rgb images");
  require(im.w > 0 && im.h > 0, "png: empty image");
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<uint8_t> out(sig, sig + 8);

  std::vector<uint8_t> ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(im.w));
  put_u32be(ihdr, static_cast<uint32_t>(im.h));
  ihdr.push_back(8);                                  // bit depth
  ihdr.push_back(im.c == 1 ? 0 : 2);                  // color type
  ihdr.push_back(0);                                  // compression
  ihdr.push_back(0);                                  // filter
  ihdr.push_back(0);                                  // no interlace
  put_chunk(out, "IHDR", ihdr);

  // raw scanlines with filter byte 0
  const size_t row = static_cast<size_t>(im.w) * im.c;
  std::vector<uint8_t> raw;
  raw.reserve((row + 1) * static_cast<size_t>(im.h));
  for (int y = 0; y < im.h; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), im.px.begin() + static_cast<long>(y * row),
               im.px.begin() + static_cast<long>((y + 1) * row));
  }

  // zlib stream with stored deflate blocks
  std::vector<uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t pos = 0;
  while (true) {
    size_t chunk = std::min<size_t>(raw.size() - pos, 65535);
    bool last = pos + chunk == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<uint8_t>(chunk & 0xff));
    z.push_back(static_cast<uint8_t>(chunk >> 8));
    z.push_back(static_cast<uint8_t>(~chunk & 0xff));
    z.push_back(static_cast<uint8_t>((~chunk >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + static_cast<long>(pos), raw.begin() + static_cast<long>(pos + chunk));
    pos += chunk;
    if (last) break;
  }
  uint32_t ad = adler32(raw.data(), raw.size());
  z.push_back(static_cast<uint8_t>(ad >> 24));
  z.push_back(static_cast<uint8_t>(ad >> 16));
  z.push_back(static_cast<uint8_t>(ad >> 8));
  z.push_back(static_cast<uint8_t>(ad));
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

void write_png(const std::string& path, const Image& im) {
  auto bytes = encode_png(im);
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "png: cannot open for write: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(os), "png: write failed: " + path);
}

// ---------------- inflate ----------------

namespace {

struct BitReader {
  const uint8_t* p;
  size_t n;
  size_t pos = 0;
  uint32_t bitbuf = 0;
  int bitcnt = 0;

  uint32_t bits(int need) {
    while (bitcnt < need) {
      require(pos < n, "inflate: out of data");
      bitbuf |= static_cast<uint32_t>(p[pos++]) << bitcnt;
      bitcnt += 8;
    }
    uint32_t v = bitbuf & ((1u << need) - 1);
    bitbuf >>= need;
    bitcnt -= need;
    return v;
  }
  void align_byte() {
    bitbuf = 0;
    bitcnt = 0;
  }
};

struct Huffman {
  // canonical decode tables
  std::vector<int> counts;   // per bit length
  std::vector<int> symbols;  // sorted by (length, symbol)

  void build(const std::vector<int>& lengths) {
    counts.assign(16, 0);
    for (int l : lengths)
      if (l) counts[static_cast<size_t>(l)]++;
    std::vector<int> offs(16, 0);
    for (int l = 1; l < 15; ++l) offs[static_cast<size_t>(l + 1)] = offs[static_cast<size_t>(l)] + counts[static_cast<size_t>(l)];
    symbols.assign(lengths.size(), 0);
    for (size_t s = 0; s < lengths.size(); ++s)
      if (lengths[s]) symbols[static_cast<size_t>(offs[static_cast<size_t>(lengths[s])]++)] = static_cast<int>(s);
  }

  int decode(BitReader& br) const {
    int code = 0, first = 0, index = 0;
    for (int len = 1; len <= 15; ++len) {
      code |= static_cast<int>(br.bits(1));
      int count = counts[static_cast<size_t>(len)];
      if (code - first < count) return symbols[static_cast<size_t>(index + (code - first))];
      index += count;
      first = (first + count) << 1;
      code <<= 1;
    }
    throw std::runtime_error("inflate: invalid huffman code");
  }
};

const int kLenBase[29] = {3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27,
                          31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258};
const int kLenExtra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                           2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
const int kDistBase[30] = {1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97, 129,
                           193, 257, 385, 513, 769, 1025, 1537, 2049, 3073, 4097, 6145,
                           8193, 12289, 16385, 24577};
const int kDistExtra[30] = {0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6,
                            6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

std::vector<uint8_t> inflate(const uint8_t* data, size_t n) {
  BitReader br{data, n};
  std::vector<uint8_t> out;
  Huffman fixed_lit, fixed_dist;
  {
    std::vector<int> ll(288);
    for (int i = 0; i < 144; ++i) ll[static_cast<size_t>(i)] = 8;
    for (int i = 144; i < 256; ++i) ll[static_cast<size_t>(i)] = 9;
    for (int i = 256; i < 280; ++i) ll[static_cast<size_t>(i)] = 7;
    for (int i = 280; i < 288; ++i) ll[static_cast<size_t>(i)] = 8;
    fixed_lit.build(ll);
    fixed_dist.build(std::vector<int>(30, 5));
  }
  bool final_block = false;
  while (!final_block) {
    final_block = br.bits(1) != 0;
    uint32_t type = br.bits(2);
    if (type == 0) {
      br.align_byte();
      require(br.pos + 4 <= br.n, "inflate: truncated stored block");
      uint32_t len = static_cast<uint32_t>(br.p[br.pos]) | (static_cast<uint32_t>(br.p[br.pos + 1]) << 8);
      uint32_t nlen = static_cast<uint32_t>(br.p[br.pos + 2]) | (static_cast<uint32_t>(br.p[br.pos + 3]) << 8);
      require((len ^ 0xffffu) == nlen, "inflate: stored block length check failed");
      br.pos += 4;
      require(br.pos + len <= br.n, "inflate: truncated stored data");
      out.insert(out.end(), br.p + br.pos, br.p + br.pos + len);
      br.pos += len;
    } else if (type == 1 || type == 2) {
      Huffman lit, dist;
      if (type == 1) {
        lit = fixed_lit;
        dist = fixed_dist;
      } else {
        int hlit = static_cast<int>(br.bits(5)) + 257;
        int hdist = static_cast<int>(br.bits(5)) + 1;
        int hclen = static_cast<int>(br.bits(4)) + 4;
        static const int ord[19] = {16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15};
        std::vector<int> cl(19, 0);
        for (int i = 0; i < hclen; ++i) cl[static_cast<size_t>(ord[i])] = static_cast<int>(br.bits(3));
        Huffman clh;
        clh.build(cl);
        std::vector<int> lens;
        lens.reserve(static_cast<size_t>(hlit + hdist));
        while (static_cast<int>(lens.size()) < hlit + hdist) {
          int sym = clh.decode(br);
          if (sym < 16) {
            lens.push_back(sym);
          } else if (sym == 16) {
            require(!lens.empty(), "inflate: repeat with no previous length");
            int rep = 3 + static_cast<int>(br.bits(2));
            for (int i = 0; i < rep; ++i) lens.push_back(lens.back());
          } else if (sym == 17) {
            int rep = 3 + static_cast<int>(br.bits(3));
            lens.insert(lens.end(), static_cast<size_t>(rep), 0);
          } else {
            int rep = 11 + static_cast<int>(br.bits(7));
            lens.insert(lens.end(), static_cast<size_t>(rep), 0);
          }
        }
        lit.build(std::vector<int>(lens.begin(), lens.begin() + hlit));
        dist.build(std::vector<int>(lens.begin() + hlit, lens.end()));
      }
      while (true) {
        int sym = lit.decode(br);
        if (sym < 256) {
          out.push_back(static_cast<uint8_t>(sym));
        } else if (sym == 256) {
          break;
        } else {
          sym -= 257;
          require(sym < 29, "inflate: bad length symbol");
          int len = kLenBase[sym] + static_cast<int>(br.bits(kLenExtra[sym]));
          int dsym = dist.decode(br);
          require(dsym < 30, "inflate: bad distance symbol");
          int d = kDistBase[dsym] + static_cast<int>(br.bits(kDistExtra[dsym]));
          require(d <= static_cast<int>(out.size()), "inflate: distance too far back");
          size_t from = out.size() - static_cast<size_t>(d);
          for (int i = 0; i < len; ++i) out.push_back(out[from + static_cast<size_t>(i)]);
        }
      }
    } else {
      throw std::runtime_error("inflate: reserved block type");
    }
  }
  return out;
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

Image decode_png(const uint8_t* data, size_t n) {
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  require(n > 8 && std::memcmp(data, sig, 8) == 0, "png: bad signature");
  size_t pos = 8;
  int w = 0, h = 0, channels = 0;
  std::vector<uint8_t> idat;
  bool seen_end = false;
  while (pos + 8 <= n && !seen_end) {
    uint32_t len = (static_cast<uint32_t>(data[pos]) << 24) | (static_cast<uint32_t>(data[pos + 1]) << 16) |
                   (static_cast<uint32_t>(data[pos + 2]) << 8) | data[pos + 3];
    require(pos + 12 + len <= n, "png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(data + pos + 4);
    const uint8_t* payload = data + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      require(len == 13, "png: bad IHDR");
      w = static_cast<int>((static_cast<uint32_t>(payload[0]) << 24) | (static_cast<uint32_t>(payload[1]) << 16) |
                           (static_cast<uint32_t>(payload[2]) << 8) | payload[3]);
      h = static_cast<int>((static_cast<uint32_t>(payload[4]) << 24) | (static_cast<uint32_t>(payload[5]) << 16) |
                           (static_cast<uint32_t>(payload[6]) << 8) | payload[7]);
      require(payload[8] == 8, "png: only 8-bit depth supported");
      require(payload[9] == 0 || payload[9] == 2, "png: only gray/rgb supported");
      channels = payload[9] == 0 ? 1 : 3;
      require(payload[12] == 0, "png: interlace not supported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_end = true;
    }
    pos += 12 + len;
  }
  require(w > 0 && h > 0 && channels > 0, "png: missing IHDR");
  require(idat.size() > 6, "png: missing IDAT");
  // skip 2-byte zlib header, trailing 4-byte adler
  std::vector<uint8_t> raw = inflate(idat.data() + 2, idat.size() - 6);
  const size_t row = static_cast<size_t>(w) * channels;
  require(raw.size() == (row + 1) * static_cast<size_t>(h), "png: scanline size mismatch");
  Image im(w, h, channels);
  const int bpp = channels;
  std::vector<uint8_t> prev(row, 0);
  for (int y = 0; y < h; ++y) {
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * (row + 1);
    uint8_t filter = src[0];
    uint8_t* dst = im.px.data() + static_cast<size_t>(y) * row;
    for (size_t i = 0; i < row; ++i) {
      int x = src[1 + i];
      int a = i >= static_cast<size_t>(bpp) ? dst[i - static_cast<size_t>(bpp)] : 0;
      int b = prev[i];
      int c = i >= static_cast<size_t>(bpp) ? prev[i - static_cast<size_t>(bpp)] : 0;
      int v;
      switch (filter) {
        case 0: v = x; break;
        case 1: v = x + a; break;
        case 2: v = x + b; break;
        case 3: v = x + (a + b) / 2; break;
        case 4: v = x + paeth(a, b, c); break;
        default: throw std::runtime_error("png: unknown filter type");
      }
      dst[i] = static_cast<uint8_t>(v & 0xff);
    }
    std::memcpy(prev.data(), dst, row);
  }
  return im;
}

Image read_png(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "png: cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_png(bytes.data(), bytes.size());
}

Image gaussian_blur(const Image& im, double sigma) {
  if (sigma <= 0.0) return im;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i / sigma) * (i / sigma));
    sum += k[static_cast<size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return i;
  };
  std::vector<double> tmp(im.px.size()), out(im.px.size());
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x)
      for (int ch = 0; ch < im.c; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<size_t>(i + radius)] * im.at(reflect(x + i, im.w), y, ch);
        tmp[(static_cast<size_t>(y) * im.w + x) * im.c + static_cast<size_t>(ch)] = acc;
      }
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x)
      for (int ch = 0; ch < im.c; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<size_t>(i + radius)] *
                 tmp[(static_cast<size_t>(reflect(y + i, im.h)) * im.w + x) * im.c + static_cast<size_t>(ch)];
        out[(static_cast<size_t>(y) * im.w + x) * im.c + static_cast<size_t>(ch)] = acc;
      }
  Image res(im.w, im.h, im.c);
  for (size_t i = 0; i < out.size(); ++i)
    res.px[i] = static_cast<uint8_t>(std::lround(std::min(255.0, std::max(0.0, out[i]))));
  return res;
}

}  // namespace logo::img
