"""Live session server: telemetry out, pilot commands in, over one socket.

The protocol is newline-delimited JSON envelopes
    {"type": ..., "seq": ..., "t": ..., "payload": {...}}
carried either over a raw TCP stream or inside WebSocket text frames; the
server sniffs the first bytes of each connection to pick the framing, so
one bind address serves both kinds of client.

All simulation logic lives in `SessionEngine`, which is plain synchronous
code also used headless: a session replayed from a recorded command log is
byte-for-byte the trajectory of the equivalent headless run, because the
socket layer only transports messages. Pilot commands are queued and
consumed at tick boundaries (zero-order hold, zeroed after a staleness
horizon); commands may carry an explicit sim-time stamp for reproducible
replays.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .agent import LandingEnv, PolicySnapshot
from .config import SimConfig
from .harness import ScenarioConfig, build_env, scenario1_grid, scenario2_set
from .perception import EstimatorModel
from .shared import arbitrate, INTENT_WINDOW, IntentModel
from .world import ControlCommand

PROTOCOL_VERSION = 1
CAPABILITIES = ["telemetry", "pilot_cmd", "blend", "timed_replay"]

_BAND_NAME = {0: "A", 1: "B", 2: "C"}


class SessionEngine:
    """One live episode: simulator, policy, blending, and command hold."""

    def __init__(
        self,
        cfg: SimConfig,
        model: EstimatorModel,
        policy: PolicySnapshot,
        scenario: ScenarioConfig,
        intent: IntentModel | None = None,
    ):
        self.cfg = cfg
        self.env: LandingEnv = build_env(cfg, scenario, model, jitter=False)
        self.policy = policy
        self.scenario = scenario
        self.intent = intent
        self.alpha_max = cfg.blend.alpha_max
        self.staleness_ticks = max(1, round(cfg.bridge.pilot_staleness_s / cfg.world.dt))
        self.pending: list[tuple[float, int, ControlCommand]] = []
        self._arrival = 0
        self.held_cmd: ControlCommand | None = None
        self.held_age = 1 << 30
        self.recent: list[ControlCommand] = []
        self.started = False
        self.terminal = False
        self.step_count = 0

    def start(self, seed: int) -> None:
        self.env.reset(np.random.default_rng([seed]))
        self.pending.clear()
        self.held_cmd = None
        self.held_age = 1 << 30
        self.recent.clear()
        self.started = True
        self.terminal = False
        self.step_count = 0

    def submit_command(self, cmd: ControlCommand, t: float | None = None) -> None:
        """Queue a pilot command; applied at the first tick at/after t."""
        if not self.started:
            raise RuntimeError("session not started")
        stamp = self.env.drone.time if t is None else t
        self._arrival += 1
        self.pending.append((stamp, self._arrival, cmd))
        self.pending.sort(key=lambda e: (e[0], e[1]))

    def tick(self) -> dict:
        """Advance one tick and return the telemetry payload."""
        if not self.started:
            raise RuntimeError("session not started")
        if self.terminal:
            raise RuntimeError("episode is terminal; start() a new one")
        env = self.env
        now = env.drone.time
        while self.pending and self.pending[0][0] <= now + 1e-9:
            self.held_cmd = self.pending.pop(0)[2]
            self.held_age = 0
        if self.held_cmd is not None and self.held_age < self.staleness_ticks:
            human = self.held_cmd
        else:
            human = ControlCommand()
        self.held_age += 1

        _, ai_cmd = env.ai_action(self.policy)
        blended = arbitrate(human, ai_cmd, self.intent, self.recent, self.alpha_max, env.v_max)
        self.recent.append(human)
        if len(self.recent) > INTENT_WINDOW:
            self.recent.pop(0)
        res = env.tick(blended.command)
        self.step_count += 1
        if env.done:
            self.terminal = True
        return self._telemetry(blended.command, blended.alpha, blended.conflict, res.obs_visible)

    def status(self) -> str:
        if not self.started:
            return "idle"
        if not self.terminal:
            return "running"
        if self.env.outcome is not None:
            return self.env.outcome.kind.value
        return "oob" if self.env.oob else "timeout"

    def _telemetry(self, cmd: ControlCommand, alpha: float, conflict: float, visible: bool) -> dict:
        env = self.env
        drone = env.drone
        obs = env.last_obs
        if visible and obs is not None:
            observation = {
                "visible": True,
                "apparent_diameter_px": obs.apparent_diameter_px,
                "viewing_angle": obs.viewing_angle,
                "color_band": obs.color_band.value,
                "ellipse_ratio": obs.ellipse_ratio,
                "centroid_px": list(obs.centroid_px),
            }
        else:
            observation = {
                "visible": False,
                "apparent_diameter_px": None,
                "viewing_angle": None,
                "color_band": None,
                "ellipse_ratio": None,
                "centroid_px": None,
            }
        est = env.est
        wind = env.wind.drift_at(drone.time)
        return {
            "drone": {
                "position": list(drone.position),
                "velocity": list(drone.velocity),
                "yaw": drone.yaw,
            },
            "pad": {
                "center": list(env.pad.center_at(drone.time)),
                "radius": env.pad.radius,
            },
            "observation": observation,
            "estimate": {
                "altitude": est.altitude,
                "depth": est.depth,
                "lateral_offset": est.lateral_offset,
                "confidence": est.confidence,
                "stale_for": est.stale_for,
            },
            "command": {
                "velocity": list(cmd.velocity),
                "yaw_rate": cmd.yaw_rate,
                "land": cmd.land,
                "alpha": alpha,
                "conflict": conflict,
            },
            "wind": [wind[0], wind[1]],
            "status": self.status(),
            "step": self.step_count,
        }

    def outcome_payload(self) -> dict:
        out = self.env.outcome
        return {
            "status": self.status(),
            "touchdown_lateral": out.lateral_displacement if out is not None else None,
            "duration": self.env.drone.time,
            "steps": self.step_count,
            "success": out is not None and out.landed and
                       out.lateral_displacement <= self.env.pad.radius,
        }


def replay_command_log(
    engine: SessionEngine, seed: int, log: list[tuple[float, ControlCommand]],
    max_ticks: int = 100000,
) -> list[dict]:
    """Headless reference run: start, queue the whole log, tick to terminal."""
    engine.start(seed)
    for t, cmd in log:
        engine.submit_command(cmd, t)
    frames = []
    while not engine.terminal and len(frames) < max_ticks:
        frames.append(engine.tick())
    return frames


def scene_payload(cfg: SimConfig) -> dict:
    lm, cam = cfg.landmark, cfg.camera
    return {
        "pad_radius": cfg.pad_radius,
        "landmark": {
            "offset_from_pad": lm.offset_from_pad,
            "height": lm.height,
            "inclination": lm.inclination,
            "diameter": lm.diameter,
            "band_edges": list(lm.band_edges),
        },
        "camera": {
            "focal_px": cam.focal_px,
            "image_width": cam.image_width,
            "image_height": cam.image_height,
            "mount_pitch": cam.mount_pitch,
            "half_vfov": cam.half_vfov,
            "half_hfov": cam.half_hfov,
        },
        "v_max": cfg.world.v_max,
        "dt": cfg.world.dt,
        "tick_hz": cfg.bridge.tick_hz,
    }


# -- wire framing -----------------------------------------------------------

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def ws_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def ws_encode_frame(payload: bytes, opcode: int = 0x1, mask: bool = False) -> bytes:
    """Encode one unfragmented WebSocket frame (server: unmasked)."""
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        len0 = n
        ext = b""
    elif n < (1 << 16):
        len0 = 126
        ext = struct.pack(">H", n)
    else:
        len0 = 127
        ext = struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        masked = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        return head + bytes([0x80 | len0]) + ext + key + masked
    return head + bytes([len0]) + ext + payload


class WSDecoder:
    """Incremental WebSocket frame decoder (unfragmented frames)."""

    def __init__(self) -> None:
        self.buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[int, bytes]]:
        self.buf.extend(data)
        frames = []
        while True:
            parsed = self._try_parse()
            if parsed is None:
                return frames
            frames.append(parsed)

    def _try_parse(self) -> tuple[int, bytes] | None:
        buf = self.buf
        if len(buf) < 2:
            return None
        opcode = buf[0] & 0x0F
        masked = bool(buf[1] & 0x80)
        length = buf[1] & 0x7F
        pos = 2
        if length == 126:
            if len(buf) < pos + 2:
                return None
            length = struct.unpack_from(">H", buf, pos)[0]
            pos += 2
        elif length == 127:
            if len(buf) < pos + 8:
                return None
            length = struct.unpack_from(">Q", buf, pos)[0]
            pos += 8
        key = b""
        if masked:
            if len(buf) < pos + 4:
                return None
            key = bytes(buf[pos:pos + 4])
            pos += 4
        if len(buf) < pos + length:
            return None
        payload = bytes(buf[pos:pos + length])
        del buf[:pos + length]
        if masked:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        return opcode, payload


class _Transport:
    async def send(self, msg: dict) -> None:
        raise NotImplementedError

    async def recv(self) -> dict | str | None:
        """Next message: a dict, a raw string on JSON parse failure, or
        None at end of stream."""
        raise NotImplementedError


class NDJSONTransport(_Transport):
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter,
                 initial: bytes = b""):
        self.reader = reader
        self.writer = writer
        self._buffer = bytearray(initial)

    async def send(self, msg: dict) -> None:
        self.writer.write(json.dumps(msg).encode() + b"\n")
        await self.writer.drain()

    async def recv(self) -> dict | str | None:
        while b"\n" not in self._buffer:
            chunk = await self.reader.read(4096)
            if not chunk:
                return None
            self._buffer.extend(chunk)
        line, _, rest = bytes(self._buffer).partition(b"\n")
        self._buffer = bytearray(rest)
        text = line.decode(errors="replace").strip()
        if not text:
            return await self.recv()
        try:
            msg = json.loads(text)
        except json.JSONDecodeError:
            return text
        return msg if isinstance(msg, dict) else text


class WebSocketTransport(_Transport):
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer
        self.decoder = WSDecoder()
        self._frames: list[tuple[int, bytes]] = []
        self._closed = False

    async def send(self, msg: dict) -> None:
        self.writer.write(ws_encode_frame(json.dumps(msg).encode()))
        await self.writer.drain()

    async def recv(self) -> dict | str | None:
        while True:
            while self._frames:
                opcode, payload = self._frames.pop(0)
                if opcode == 0x8:  # close
                    if not self._closed:
                        self._closed = True
                        self.writer.write(ws_encode_frame(payload, opcode=0x8))
                        await self.writer.drain()
                    return None
                if opcode == 0x9:  # ping -> pong
                    self.writer.write(ws_encode_frame(payload, opcode=0xA))
                    await self.writer.drain()
                    continue
                if opcode == 0x1:
                    text = payload.decode(errors="replace")
                    try:
                        msg = json.loads(text)
                    except json.JSONDecodeError:
                        return text
                    return msg if isinstance(msg, dict) else text
            chunk = await self.reader.read(4096)
            if not chunk:
                return None
            self._frames.extend(self.decoder.feed(chunk))


async def _negotiate(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> _Transport | None:
    """Sniff the first bytes: HTTP upgrade means WebSocket, else NDJSON."""
    first = await reader.read(3)
    if not first:
        return None
    if first != b"GET":
        return NDJSONTransport(reader, writer, initial=first)
    # read the rest of the HTTP request
    head = bytearray(first)
    while b"\r\n\r\n" not in head:
        chunk = await reader.read(4096)
        if not chunk:
            return None
        head.extend(chunk)
        if len(head) > 65536:
            return None
    text = bytes(head).split(b"\r\n\r\n", 1)[0].decode(errors="replace")
    key = None
    for line in text.split("\r\n")[1:]:
        name, _, value = line.partition(":")
        if name.strip().lower() == "sec-websocket-key":
            key = value.strip()
    if key is None:
        writer.write(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        await writer.drain()
        return None
    writer.write(
        b"HTTP/1.1 101 Switching Protocols\r\n"
        b"Upgrade: websocket\r\n"
        b"Connection: Upgrade\r\n"
        b"Sec-WebSocket-Accept: " + ws_accept_key(key).encode() + b"\r\n\r\n"
    )
    await writer.drain()
    return WebSocketTransport(reader, writer)


# -- session protocol -------------------------------------------------------


@dataclass
class BridgeContext:
    cfg: SimConfig
    model: EstimatorModel
    policy: PolicySnapshot
    tick_hz: float


class ClientSession:
    """Protocol state machine for one connection; owns one engine."""

    def __init__(self, ctx: BridgeContext, transport: _Transport):
        self.ctx = ctx
        self.transport = transport
        self.engine: SessionEngine | None = None
        self.seq = 0
        self.last_client_seq = 0
        self.hello_done = False
        self.tick_task: asyncio.Task | None = None

    async def send(self, type_: str, payload: dict, t: float | None = None) -> None:
        self.seq += 1
        await self.transport.send({"type": type_, "seq": self.seq, "t": t, "payload": payload})

    async def error(self, message: str, ref_seq: int | None = None) -> None:
        await self.send("error", {"message": message, "ref_seq": ref_seq})

    def _default_scenario(self) -> ScenarioConfig:
        return scenario1_grid(self.ctx.cfg)[0]

    def _build_engine(self, suite: str, case: int) -> SessionEngine:
        cfg = self.ctx.cfg
        scenarios = scenario1_grid(cfg) if suite == "static" else scenario2_set(cfg)
        if not (1 <= case <= len(scenarios)):
            raise ValueError(f"no case {case} in the {suite} suite")
        return SessionEngine(cfg, self.ctx.model, self.ctx.policy, scenarios[case - 1])

    async def run(self) -> None:
        try:
            while True:
                msg = await self.transport.recv()
                if msg is None:
                    return
                if isinstance(msg, str):
                    await self.error("malformed JSON")
                    continue
                await self.handle(msg)
        finally:
            self._stop_ticking()

    def _stop_ticking(self) -> None:
        if self.tick_task is not None:
            self.tick_task.cancel()
            self.tick_task = None

    async def handle(self, msg: dict) -> None:
        mtype = msg.get("type")
        seq = msg.get("seq")
        payload = msg.get("payload") or {}
        if isinstance(seq, int):
            if seq <= self.last_client_seq:
                await self.error(f"seq {seq} not increasing", ref_seq=seq)
                return
            self.last_client_seq = seq

        if mtype == "hello":
            version = payload.get("version")
            if version != PROTOCOL_VERSION:
                await self.error(f"unsupported protocol version {version!r}", ref_seq=seq)
                raise ConnectionAbortedError("protocol version mismatch")
            self.hello_done = True
            await self.send("hello", {
                "version": PROTOCOL_VERSION,
                "capabilities": CAPABILITIES,
                "scene": scene_payload(self.ctx.cfg),
            })
            return
        if not self.hello_done:
            await self.error("say hello first", ref_seq=seq)
            return

        if mtype == "configure":
            if self.tick_task is not None:
                await self.error("cannot configure a running session", ref_seq=seq)
                return
            suite = payload.get("suite", "static")
            case = int(payload.get("case", 1))
            try:
                self.engine = self._build_engine(suite, case)
            except ValueError as e:
                await self.error(str(e), ref_seq=seq)
                return
            if "alpha_max" in payload:
                self.engine.alpha_max = min(max(float(payload["alpha_max"]), 0.0), 1.0)
            await self.send("configured", {"suite": suite, "case": case})
            return

        if mtype == "start":
            if self.engine is None:
                self.engine = SessionEngine(
                    self.ctx.cfg, self.ctx.model, self.ctx.policy, self._default_scenario()
                )
            seed = int(payload.get("seed", self.engine.scenario.seed))
            self.engine.start(seed)
            self._stop_ticking()
            self.tick_task = asyncio.get_running_loop().create_task(self._tick_loop())
            await self.send("started", {"seed": seed, "scenario": self.engine.scenario.to_dict()})
            return

        if mtype == "stop":
            self._stop_ticking()
            await self.send("stopped", {"status": self.engine.status() if self.engine else "idle"})
            return

        if mtype == "pilot_cmd":
            if self.engine is None or not self.engine.started:
                await self.error("session not started", ref_seq=seq)
                return
            try:
                v = payload.get("velocity", [0.0, 0.0, 0.0])
                cmd = ControlCommand(
                    velocity=(float(v[0]), float(v[1]), float(v[2])),
                    yaw_rate=float(payload.get("yaw_rate", 0.0)),
                    land=bool(payload.get("land", False)),
                )
            except (TypeError, ValueError, IndexError):
                await self.error("malformed pilot_cmd payload", ref_seq=seq)
                return
            if not cmd.within_bounds(self.ctx.cfg.world.v_max) or not all(
                math.isfinite(c) for c in (*cmd.velocity, cmd.yaw_rate)
            ):
                await self.error("command out of bounds", ref_seq=seq)
                return
            t = msg.get("t")
            self.engine.submit_command(cmd, float(t) if t is not None else None)
            return

        if mtype == "set_alpha_max":
            if self.engine is None:
                await self.error("session not configured", ref_seq=seq)
                return
            try:
                self.engine.alpha_max = min(max(float(payload.get("alpha_max")), 0.0), 1.0)
            except (TypeError, ValueError):
                await self.error("malformed set_alpha_max payload", ref_seq=seq)
                return
            return

        await self.error(f"unknown message type {mtype!r}", ref_seq=seq)

    async def _tick_loop(self) -> None:
        period = 1.0 / self.ctx.tick_hz
        loop = asyncio.get_running_loop()
        next_at = loop.time()
        engine = self.engine
        while engine is not None and not engine.terminal:
            frame = engine.tick()
            await self.send("telemetry", frame, t=engine.env.drone.time)
            if engine.terminal:
                await self.send("metrics", engine.outcome_payload(), t=engine.env.drone.time)
                return
            next_at += period
            delay = next_at - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)


async def serve_async(
    bind: str,
    cfg: SimConfig,
    model: EstimatorModel,
    policy: PolicySnapshot,
    tick_hz: float | None = None,
) -> asyncio.AbstractServer:
    """Listen on host:port; one independent session per connection."""
    host, _, port_s = bind.rpartition(":")
    host = host or "127.0.0.1"
    port = int(port_s)
    hz = tick_hz if tick_hz is not None else float(
        os.environ.get("MONOLANDER_TICK_HZ", cfg.bridge.tick_hz)
    )
    ctx = BridgeContext(cfg=cfg, model=model, policy=policy, tick_hz=hz)

    async def handler(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            transport = await _negotiate(reader, writer)
            if transport is None:
                return
            session = ClientSession(ctx, transport)
            await session.run()
        except (ConnectionAbortedError, ConnectionResetError, asyncio.IncompleteReadError):
            pass
        finally:
            try:
                writer.close()
                await writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError):
                pass

    return await asyncio.start_server(handler, host, port)


def serve(
    bind: str,
    cfg: SimConfig,
    model: EstimatorModel,
    policy: PolicySnapshot,
    tick_hz: float | None = None,
) -> None:
    """Blocking entry point used by the CLI; runs until interrupted."""
    bind = os.environ.get("MONOLANDER_BIND", bind)

    async def main() -> None:
        server = await serve_async(bind, cfg, model, policy, tick_hz)
        addrs = ", ".join(str(s.getsockname()) for s in server.sockets)
        print(f"session bridge listening on {addrs} (TCP NDJSON + WebSocket)")
        async with server:
            await server.serve_forever()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
