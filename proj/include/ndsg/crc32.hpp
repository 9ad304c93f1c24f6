#pragma once

#include <cstddef>
#include <cstdint>

namespace ndsg {

/// CRC-32 (polynomial 0x04C11DB7, reflected form 0xEDB88320, init and final
/// xor 0xFFFFFFFF). Matches the ubiquitous zlib/PNG checksum; "123456789"
/// hashes to 0xCBF43926.
uint32_t crc32(const uint8_t* data, size_t len);

}  // namespace ndsg
