import struct
import threading
import numpy as np
import pytest
from src.cli.suites import codec_suite, random_message
from src.transport.channels import InProcessChannel, TcpChannel, TcpListener, open_links, transport_recv, transport_send
from src.transport.codec import HEADER_SIZE, decode, encode, message_size, seal
from src.transport.message import GradientMessage, StepKind
from src.utils.errors import (
    ChecksumError,
    CodecError,
    ConnectionClosedError,
    FrameTooLargeError,
    LengthOverflowError,
    NonFiniteError,
    TransportError,
    TruncatedError,
    UnknownVersionError,
)


def small_message(round=3, client_id=7):
    return GradientMessage.from_gradients(round, client_id, "X", StepKind.D_STEP,
                                          {"DX": {"head.b": np.array([1.0, -1.0], dtype=np.float32)}})


# ============================================================================
# Codec
# ============================================================================

def test_empty_message_is_header_plus_crc():
    frame = encode(GradientMessage(round=0, client_id=0, domain="X", step=StepKind.COMBINED))
    assert len(frame) == 18
    assert HEADER_SIZE == 14


def test_payload_is_little_endian_float32():
    frame = encode(small_message())
    # header, group (role code + entry count), name length, name, rank, one extent
    offset = HEADER_SIZE + 3 + 2 + len("head.b") + 1 + 4
    assert frame[offset:offset + 8] == bytes.fromhex("0000803f000080bf")


def test_round_trip_preserves_message():
    message = small_message()
    assert decode(encode(message)) == message


def test_encoding_is_deterministic():
    assert encode(small_message()) == encode(small_message())


def test_corrupted_payload_fails_checksum():
    frame = bytearray(encode(small_message()))
    frame[-6] ^= 0xFF
    with pytest.raises(ChecksumError):
        decode(bytes(frame))


@pytest.mark.parametrize("cut", [1, 4, 9])
def test_truncated_frame_rejected(cut):
    frame = encode(small_message())
    with pytest.raises(TruncatedError):
        decode(frame[:-cut])


def test_short_buffer_rejected():
    with pytest.raises(TruncatedError):
        decode(b"\x01\x00")


def test_unknown_version_with_valid_crc():
    body = bytearray(encode(small_message())[:-4])
    body[0:2] = b"\xff\xff"
    with pytest.raises(UnknownVersionError):
        decode(seal(bytes(body)))


def test_bytes_after_layout_rejected():
    body = encode(small_message())[:-4] + b"\x00\x00"
    with pytest.raises(LengthOverflowError):
        decode(seal(body))


def entry_frame(extents, payload=b""):
    """Sealed message holding one DX entry 'w' with the given extents."""
    header = encode(GradientMessage(round=0, client_id=0, domain="X", step=StepKind.D_STEP))[:HEADER_SIZE - 2]
    body = header + struct.pack("<HBH", 1, 2, 1) + struct.pack("<H", 1) + b"w" + bytes([len(extents)])
    body += b"".join(struct.pack("<I", extent) for extent in extents)
    return seal(body + payload)


def test_extents_whose_product_wraps_64_bits_rejected():
    with pytest.raises(CodecError):
        decode(entry_frame((65536,) * 4))


def test_payload_larger_than_the_buffer_is_a_length_overflow():
    with pytest.raises(LengthOverflowError):
        decode(entry_frame((1 << 20, 1 << 20)))


def test_zero_extent_rejected():
    with pytest.raises(CodecError):
        decode(entry_frame((0, 3)))
    with pytest.raises(CodecError):
        encode(GradientMessage(round=0, client_id=0, domain="X", step=StepKind.D_STEP,
                               groups={"DX": {"w": np.zeros((0, 3), dtype=np.float32)}}))


def test_hand_built_entry_frame_decodes():
    message = decode(entry_frame((2,), np.array([1.5, -2.0], dtype="<f4").tobytes()))
    np.testing.assert_array_equal(message.groups["DX"]["w"], [1.5, -2.0])


def test_unknown_domain_code_rejected():
    body = bytearray(encode(small_message())[:-4])
    body[HEADER_SIZE - 4] = 9
    with pytest.raises(CodecError):
        decode(seal(bytes(body)))


def test_non_finite_gradient_not_encoded():
    message = GradientMessage.from_gradients(0, 0, "Y", StepKind.G_STEP,
                                             {"F": {"head.b": np.array([np.inf], dtype=np.float32)}})
    with pytest.raises(NonFiniteError) as info:
        encode(message)
    assert info.value.parameter == "F/head.b"


def test_message_size_matches_encoding():
    rng = np.random.default_rng(11)
    for _ in range(20):
        message = random_message(rng)
        assert message_size(message.groups) == len(encode(message))
        shapes = {role: {name: v.shape for name, v in entries.items()} for role, entries in message.groups.items()}
        assert message_size(shapes) == len(encode(message))


def test_codec_suite_passes():
    result = codec_suite(messages=100, seed=5)
    assert result.passed, [c for c in result.checks if not c.passed]


# ============================================================================
# Channels
# ============================================================================

def test_in_process_channel_keeps_order():
    server, client = InProcessChannel.pair()
    messages = [small_message(round=k) for k in range(1000)]
    for message in messages:
        transport_send(client, message)
    assert [transport_recv(server, timeout=1.0) for _ in messages] == messages


def test_tcp_loopback_keeps_order():
    rng = np.random.default_rng(2)
    messages = [random_message(rng) for _ in range(1000)]
    with open_links("tcp", [0]) as links:
        link = links[0]
        sender = threading.Thread(target=lambda: [transport_send(link.client, m) for m in messages])
        sender.start()
        received = [transport_recv(link.server, timeout=10.0) for _ in messages]
        sender.join()
    assert received == messages


def test_in_process_frame_cap():
    _, client = InProcessChannel.pair(frame_cap=10)
    with pytest.raises(FrameTooLargeError):
        client.send(encode(small_message()))


def test_tcp_receiver_enforces_frame_cap():
    listener = TcpListener("127.0.0.1", 0, frame_cap=16)
    client = TcpChannel.connect(*listener.address)
    server = listener.accept()
    try:
        client.send(encode(small_message()))
        with pytest.raises(FrameTooLargeError):
            server.poll(5.0)
    finally:
        client.close()
        server.close()
        listener.close()


def test_in_process_peer_close():
    server, client = InProcessChannel.pair()
    client.close()
    with pytest.raises(ConnectionClosedError):
        server.poll(1.0)


def test_tcp_peer_close():
    with open_links("tcp", [4]) as links:
        links[4].client.close()
        with pytest.raises(ConnectionClosedError):
            links[4].server.poll(5.0)


def test_recv_times_out():
    server, _ = InProcessChannel.pair()
    with pytest.raises(TransportError):
        server.recv(timeout=0.01)
