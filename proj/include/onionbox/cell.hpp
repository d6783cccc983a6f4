#pragma once

#include <cstdint>

#include "onionbox/bytes.hpp"
#include "onionbox/crypto.hpp"
#include "onionbox/error.hpp"

namespace onionbox {

// Every unit on an inter-node link is exactly CELL_SIZE octets:
//   [0..4)   circuit_id, big-endian
//   [4]      command
//   [5..7)   payload_len, big-endian
//   [7..512) payload content followed by random padding
constexpr size_t CELL_SIZE = 512;
constexpr size_t CELL_HEADER = 7;
constexpr size_t CELL_PAYLOAD = CELL_SIZE - CELL_HEADER;  // 505

enum class CellCommand : uint8_t {
    CREATE = 1,
    CREATED = 2,
    RELAY = 3,
    DESTROY = 4,
};

inline bool valid_cell_command(uint8_t v) { return v >= 1 && v <= 4; }

struct Cell {
    uint32_t circuit_id = 0;
    CellCommand command = CellCommand::DESTROY;
    Bytes payload;  // logical content, payload_len octets

    Cell() = default;
    Cell(uint32_t id, CellCommand cmd, Bytes body)
        : circuit_id(id), command(cmd), payload(std::move(body)) {}

    bool operator==(const Cell& o) const = default;
};

inline Bytes encode_cell(const Cell& cell) {
    if (cell.payload.size() > CELL_PAYLOAD)
        throw Error(Error::Kind::Encoding,
                    "cell payload " + std::to_string(cell.payload.size()) + " exceeds " +
                        std::to_string(CELL_PAYLOAD));
    Bytes out(CELL_SIZE);
    put_be32(out.data(), cell.circuit_id);
    out[4] = static_cast<uint8_t>(cell.command);
    put_be16(out.data() + 5, static_cast<uint16_t>(cell.payload.size()));
    std::memcpy(out.data() + CELL_HEADER, cell.payload.data(), cell.payload.size());
    // Padding comes from the CSPRNG so identical content never repeats on the wire.
    size_t pad = CELL_PAYLOAD - cell.payload.size();
    if (pad) randombytes_buf(out.data() + CELL_HEADER + cell.payload.size(), pad);
    return out;
}

inline Cell decode_cell(BytesView raw) {
    if (raw.size() != CELL_SIZE)
        throw Error(Error::Kind::Framing,
                    "cell must be " + std::to_string(CELL_SIZE) + " octets, got " +
                        std::to_string(raw.size()));
    if (!valid_cell_command(raw[4]))
        throw Error(Error::Kind::Protocol, "unknown cell command " + std::to_string(raw[4]));
    uint16_t len = get_be16(raw.data() + 5);
    if (len > CELL_PAYLOAD)
        throw Error(Error::Kind::Protocol, "payload_len " + std::to_string(len) + " exceeds max");
    Cell cell;
    cell.circuit_id = get_be32(raw.data());
    cell.command = static_cast<CellCommand>(raw[4]);
    cell.payload.assign(raw.begin() + CELL_HEADER, raw.begin() + CELL_HEADER + len);
    return cell;
}

}  // namespace onionbox
