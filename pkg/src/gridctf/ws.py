"""Minimal WebSocket framing over asyncio streams (text frames, ping/pong,
close), plus a small client used by tests and headless play."""

from __future__ import annotations

import asyncio
import base64
import hashlib
import json
import os
import struct

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WsError(ConnectionError):
    pass


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def encode_frame(opcode: int, payload: bytes, mask: bool = False) -> bytes:
    head = bytearray([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        head.append(mask_bit | n)
    elif n < 1 << 16:
        head.append(mask_bit | 126)
        head += struct.pack(">H", n)
    else:
        head.append(mask_bit | 127)
        head += struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        head += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return bytes(head) + payload


async def read_frame(reader: asyncio.StreamReader) -> tuple[int, bytes, bool]:
    """Returns (opcode, payload, fin)."""
    header = await reader.readexactly(2)
    fin = bool(header[0] & 0x80)
    opcode = header[0] & 0x0F
    masked = bool(header[1] & 0x80)
    length = header[1] & 0x7F
    if length == 126:
        (length,) = struct.unpack(">H", await reader.readexactly(2))
    elif length == 127:
        (length,) = struct.unpack(">Q", await reader.readexactly(8))
    key = await reader.readexactly(4) if masked else None
    payload = await reader.readexactly(length) if length else b""
    if key:
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return opcode, payload, fin


async def read_message(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> str | None:
    """Next complete text message; answers pings; None once closed."""
    buffer = b""
    while True:
        try:
            opcode, payload, fin = await read_frame(reader)
        except (asyncio.IncompleteReadError, ConnectionError):
            return None
        if opcode == OP_CLOSE:
            try:
                writer.write(encode_frame(OP_CLOSE, b""))
            except ConnectionError:
                pass
            return None
        if opcode == OP_PING:
            writer.write(encode_frame(OP_PONG, payload))
            continue
        if opcode == OP_PONG:
            continue
        buffer += payload
        if fin:
            return buffer.decode("utf-8", errors="replace")


class WsClient:
    """Test-oriented client: handshake, JSON messages, orderly close."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer

    @classmethod
    async def connect(cls, host: str, port: int, path: str = "/ws") -> "WsClient":
        reader, writer = await asyncio.open_connection(host, port)
        key = base64.b64encode(os.urandom(16)).decode()
        request = (
            f"GET {path} HTTP/1.1\r\n"
            f"Host: {host}:{port}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        )
        writer.write(request.encode())
        await writer.drain()
        status = await reader.readline()
        if b"101" not in status:
            raise WsError(f"handshake rejected: {status!r}")
        expected = accept_key(key)
        accepted = None
        while True:
            line = await reader.readline()
            if line in (b"\r\n", b""):
                break
            name, _, value = line.decode().partition(":")
            if name.strip().lower() == "sec-websocket-accept":
                accepted = value.strip()
        if accepted != expected:
            raise WsError("bad Sec-WebSocket-Accept")
        return cls(reader, writer)

    async def send_json(self, obj) -> None:
        data = (json.dumps(obj, sort_keys=True) + "\n").encode()
        self.writer.write(encode_frame(OP_TEXT, data, mask=True))
        await self.writer.drain()

    async def recv_json(self, timeout: float | None = None):
        coro = read_message(self.reader, self.writer)
        text = await (asyncio.wait_for(coro, timeout) if timeout else coro)
        if text is None:
            return None
        return json.loads(text)

    async def close(self) -> None:
        try:
            self.writer.write(encode_frame(OP_CLOSE, b"", mask=True))
            await self.writer.drain()
        except ConnectionError:
            pass
        self.writer.close()


def send_json_frame(writer: asyncio.StreamWriter, obj) -> None:
    """Server-side fire-and-forget send; never blocks the caller."""
    data = (json.dumps(obj, sort_keys=True) + "\n").encode()
    writer.write(encode_frame(OP_TEXT, data))
