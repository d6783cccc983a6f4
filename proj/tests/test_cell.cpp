#include <catch2/catch_amalgamated.hpp>

#include "onionbox/cell.hpp"
#include "test_util.hpp"

using namespace onionbox;
using testutil::kind_of;

TEST_CASE("destroy cell has fixed-offset header") {
    Cell c{1, CellCommand::DESTROY, {}};
    Bytes raw = encode_cell(c);
    REQUIRE(raw.size() == 512);
    const uint8_t header[7] = {0x00, 0x00, 0x00, 0x01, 0x04, 0x00, 0x00};
    REQUIRE(std::memcmp(raw.data(), header, 7) == 0);
}

TEST_CASE("full payload leaves no padding region") {
    Cell c{0xFFFFFFFFu, CellCommand::CREATE, Bytes(505, 0xAA)};
    Bytes raw = encode_cell(c);
    REQUIRE(raw.size() == 512);
    REQUIRE(get_be32(raw.data()) == 0xFFFFFFFFu);
    REQUIRE(raw[4] == 1);
    REQUIRE(get_be16(raw.data() + 5) == 505);
    for (size_t i = 7; i < 512; ++i) REQUIRE(raw[i] == 0xAA);
}

TEST_CASE("oversize payload is an encoding error") {
    Cell c{1, CellCommand::RELAY, Bytes(506, 0x00)};
    REQUIRE(kind_of([&] { encode_cell(c); }) == Error::Kind::Encoding);
}

TEST_CASE("decode rejects off-size frames") {
    REQUIRE(kind_of([] { decode_cell(Bytes(511)); }) == Error::Kind::Framing);
    REQUIRE(kind_of([] { decode_cell(Bytes(513)); }) == Error::Kind::Framing);
    REQUIRE(kind_of([] { decode_cell(Bytes{}); }) == Error::Kind::Framing);
}

TEST_CASE("decode rejects unknown command octet") {
    Bytes raw = encode_cell(Cell{1, CellCommand::RELAY, {}});
    raw[4] = 9;
    REQUIRE(kind_of([&] { decode_cell(raw); }) == Error::Kind::Protocol);
    raw[4] = 0;
    REQUIRE(kind_of([&] { decode_cell(raw); }) == Error::Kind::Protocol);
}

TEST_CASE("decode rejects payload_len beyond budget") {
    Bytes raw = encode_cell(Cell{1, CellCommand::RELAY, {}});
    put_be16(raw.data() + 5, 506);
    REQUIRE(kind_of([&] { decode_cell(raw); }) == Error::Kind::Protocol);
}

TEST_CASE("round-trip over random cells") {
    auto& gen = testutil::rng();
    for (int i = 0; i < 1000; ++i) {
        Cell c;
        c.circuit_id = static_cast<uint32_t>(gen());
        c.command = static_cast<CellCommand>(1 + gen() % 4);
        c.payload = testutil::random_bytes(gen() % 506);
        Bytes raw = encode_cell(c);
        REQUIRE(raw.size() == 512);
        Cell back = decode_cell(raw);
        REQUIRE(back == c);
    }
}

TEST_CASE("padding is drawn fresh per encode") {
    Cell c{7, CellCommand::RELAY, to_bytes("same content")};
    Bytes a = encode_cell(c);
    Bytes b = encode_cell(c);
    size_t content_end = CELL_HEADER + c.payload.size();
    REQUIRE(std::equal(a.begin(), a.begin() + content_end, b.begin()));
    // 493 random padding octets colliding would be a broken RNG.
    REQUIRE(!std::equal(a.begin() + content_end, a.end(), b.begin() + content_end));
    REQUIRE(decode_cell(a) == decode_cell(b));
}
