"""Minimal Standard MIDI File writer/parser for the subset this project emits.

Writer: SMF type 1, one tempo track plus one note track, 480 PPQN.  Parser:
general enough for dataset files — running status, note-on with velocity 0 as
note-off, tempo map, track names — everything else is skipped structurally.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

PPQN = 480


class MidiParseError(ValueError):
    pass


@dataclass(frozen=True)
class MidiNote:
    start_tick: int
    duration_tick: int
    pitch: int
    velocity: int


@dataclass
class MidiTrack:
    name: str = ""
    notes: list[MidiNote] = field(default_factory=list)


@dataclass
class MidiData:
    ppqn: int
    tracks: list[MidiTrack]
    tempos: list[tuple[int, int]]  # (tick, microseconds per quarter note)

    def tick_to_seconds(self, tick: int) -> float:
        """Integrate the tempo map up to `tick` (default 120 bpm before any event)."""
        tempos = self.tempos or [(0, 500_000)]
        if tempos[0][0] > 0:
            tempos = [(0, 500_000)] + tempos
        seconds = 0.0
        for (t0, us), (t1, _) in zip(tempos, tempos[1:] + [(tick, 0)]):
            if tick <= t0:
                break
            span = min(tick, t1) - t0
            if span > 0:
                seconds += span * us / (self.ppqn * 1_000_000)
            if tick <= t1:
                break
        return seconds


def _vlq(value: int) -> bytes:
    if value < 0:
        raise ValueError("negative delta time")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def _read_vlq(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    while True:
        if pos >= len(data):
            raise MidiParseError("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos


def _track_chunk(events: list[tuple[int, bytes]]) -> bytes:
    """Events as (absolute_tick, payload); emits sorted with delta times."""
    events = sorted(events, key=lambda e: e[0])
    body = bytearray()
    last = 0
    for tick, payload in events:
        body += _vlq(tick - last)
        body += payload
        last = tick
    body += _vlq(0) + b"\xff\x2f\x00"  # end of track
    return b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def write_midi_bytes(tempo_bpm: float, notes: Iterable[MidiNote],
                     track_name: str = "accompaniment",
                     time_signature: Optional[tuple[int, int]] = None) -> bytes:
    us_per_qn = round(60_000_000 / tempo_bpm)
    meta: list[tuple[int, bytes]] = [(0, b"\xff\x51\x03" + us_per_qn.to_bytes(3, "big"))]
    if time_signature is not None:
        num, den = time_signature
        den_pow = {1: 0, 2: 1, 4: 2, 8: 3, 16: 4}[den]
        meta.append((0, b"\xff\x58\x04" + bytes([num, den_pow, 24, 8])))

    name = track_name.encode("utf-8")
    note_events: list[tuple[int, bytes]] = [(0, b"\xff\x03" + _vlq(len(name)) + name)]
    for i, note in enumerate(sorted(notes, key=lambda n: (n.start_tick, n.pitch))):
        note_events.append((note.start_tick, bytes([0x90, note.pitch, note.velocity])))
        note_events.append((note.start_tick + note.duration_tick, bytes([0x80, note.pitch, 0])))

    header = b"MThd" + struct.pack(">IHHH", 6, 1, 2, PPQN)
    return header + _track_chunk(meta) + _track_chunk(note_events)


def write_midi_file(path, tempo_bpm: float, notes: Iterable[MidiNote],
                    track_name: str = "accompaniment",
                    time_signature: Optional[tuple[int, int]] = None) -> None:
    data = write_midi_bytes(tempo_bpm, notes, track_name, time_signature)
    with open(path, "wb") as fh:
        fh.write(data)


def parse_midi_bytes(data: bytes) -> MidiData:
    if data[:4] != b"MThd":
        raise MidiParseError("missing MThd header")
    (hlen,) = struct.unpack(">I", data[4:8])
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if division & 0x8000:
        raise MidiParseError("SMPTE time division not supported")
    pos = 8 + hlen

    tracks: list[MidiTrack] = []
    tempos: list[tuple[int, int]] = []
    for _ in range(ntracks):
        if data[pos:pos + 4] != b"MTrk":
            raise MidiParseError("missing MTrk chunk")
        (tlen,) = struct.unpack(">I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + tlen]
        pos += 8 + tlen

        track = MidiTrack()
        tick = 0
        p = 0
        status = 0
        active: dict[tuple[int, int], list[tuple[int, int]]] = {}
        while p < len(body):
            delta, p = _read_vlq(body, p)
            tick += delta
            byte = body[p]
            if byte >= 0x80:
                status = byte
                p += 1
            if status == 0xFF:
                meta_type = body[p]
                length, p2 = _read_vlq(body, p + 1)
                payload = body[p2:p2 + length]
                p = p2 + length
                if meta_type == 0x51 and length == 3:
                    tempos.append((tick, int.from_bytes(payload, "big")))
                elif meta_type == 0x03 and not track.name:
                    track.name = payload.decode("utf-8", errors="replace")
                status = 0
                continue
            if status in (0xF0, 0xF7):  # sysex
                length, p2 = _read_vlq(body, p)
                p = p2 + length
                status = 0
                continue
            kind = status & 0xF0
            channel = status & 0x0F
            if kind in (0x80, 0x90, 0xA0, 0xB0, 0xE0):
                d1, d2 = body[p], body[p + 1]
                p += 2
            elif kind in (0xC0, 0xD0):
                d1, d2 = body[p], 0
                p += 1
            else:
                raise MidiParseError(f"unexpected status byte {status:#x}")
            if kind == 0x90 and d2 > 0:
                active.setdefault((channel, d1), []).append((tick, d2))
            elif kind == 0x80 or (kind == 0x90 and d2 == 0):
                stack = active.get((channel, d1))
                if stack:
                    start, vel = stack.pop(0)
                    track.notes.append(MidiNote(start, max(tick - start, 1), d1, vel))
        for (channel, pitch), stack in active.items():
            for start, vel in stack:  # unterminated notes: close at last tick
                track.notes.append(MidiNote(start, max(tick - start, 1), pitch, vel))
        track.notes.sort(key=lambda n: (n.start_tick, n.pitch))
        tracks.append(track)

    tempos.sort()
    return MidiData(ppqn=division, tracks=tracks, tempos=tempos)


def parse_midi_file(path) -> MidiData:
    with open(path, "rb") as fh:
        return parse_midi_bytes(fh.read())
