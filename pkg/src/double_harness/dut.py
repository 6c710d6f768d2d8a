"""Reference drivers: the production-code side of the rig.

Each driver talks to its peripheral through a virtual bus and knows nothing
about the double on the far side. Deliberate bugs can be armed through
FaultConfig at construction time only; nothing on the command channel can
reach them, so with every fault off the drivers behave exactly like a
fault-free build. The faults exist to prove the harness catches real driver
mistakes: a skewed blink period, a BCD encode bug, a missing NMEA checksum,
an off-by-one in the SPI receive path, and a slow BLE bring-up.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import bus as _bus
from .simcore import EventHandle, Scheduler


class NotStartedError(Exception):
    """Operation needs start() first."""


@dataclass(frozen=True)
class FaultConfig:
    """Config-level fault switches; all off means a correct build."""

    period_skew_ms: int = 0
    swap_bcd_nibbles: bool = False
    omit_checksum: bool = False
    drop_first_byte: bool = False
    ble_init_delay_ms: int | None = None


NO_FAULTS = FaultConfig()


# ---------------------------------------------------------------------------
# GPIO blinker


class Blinker:
    """Toggles a GPIO line `count` times on, `count` times off.

    period_ms is the toggle interval (time spent at each level), so a
    listener measuring toggle-to-toggle spacing reads back period_ms
    directly. Blocking mode burns simulated time inside the call; isr mode
    arms a periodic timer event and returns immediately. Both produce the
    same edge times.
    """

    def __init__(
        self,
        line: _bus.GpioLine,
        period_ms: int,
        count: int,
        scheduler: Scheduler,
        faults: FaultConfig = NO_FAULTS,
    ) -> None:
        if period_ms < 1:
            raise ValueError(f"period must be >= 1 ms, got {period_ms}")
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        self.line = line
        self.period_ms = period_ms
        self.count = count
        self._scheduler = scheduler
        self._faults = faults
        self._isr_handle: EventHandle | None = None
        self._isr_remaining = 0

    def blink(self, mode: str) -> None:
        if mode not in ("blocking", "isr"):
            raise ValueError(f"mode must be blocking or isr, got {mode!r}")
        period = self.period_ms + self._faults.period_skew_ms
        if period < 1:
            raise ValueError("skewed period collapsed below 1 ms")
        if mode == "blocking":
            for _ in range(2 * self.count):
                self._scheduler.advance_by(period)
                self.line.toggle(self._scheduler.now)
        else:
            self._isr_remaining = 2 * self.count
            self._isr_handle = self._scheduler.schedule(period, self._isr_toggle, periodic=period)

    def close(self) -> None:
        if self._isr_handle is not None:
            self._scheduler.cancel(self._isr_handle)
            self._isr_handle = None

    def _isr_toggle(self) -> None:
        self.line.toggle(self._scheduler.now)
        self._isr_remaining -= 1
        if self._isr_remaining <= 0 and self._isr_handle is not None:
            self._scheduler.cancel(self._isr_handle)
            self._isr_handle = None


# ---------------------------------------------------------------------------
# RTC driver (I2C)

_RTC_ADDR = 0x68
_MONTH_DAYS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
# Sakamoto's offsets for day-of-week computation.
_SAKAMOTO = (0, 3, 2, 5, 0, 3, 5, 1, 4, 6, 2, 4)


def _enc(value: int) -> int:
    return ((value // 10) << 4) | (value % 10)


def _dec(byte: int) -> int:
    return (byte >> 4) * 10 + (byte & 0x0F)


def _swap_nibbles(byte: int) -> int:
    return ((byte & 0x0F) << 4) | (byte >> 4)


class RtcDriver:
    """Sets and gets the date/time of a DS3231-style RTC over I2C.

    One transaction per operation: set writes the register pointer plus all
    seven BCD registers, get writes the pointer and reads seven back.
    Datetimes are [year, month, day, hour, minute, second] with the year in
    2000..2099; the weekday register is maintained internally (ISO, 1=Mon).
    """

    def __init__(self, i2c: _bus.I2cBus, faults: FaultConfig = NO_FAULTS) -> None:
        self.i2c = i2c
        self.addr = _RTC_ADDR
        self._faults = faults

    def set_datetime(self, dt: list[int]) -> None:
        year, month, day, hour, minute, second = self._validate(dt)
        regs = [
            _enc(second),
            _enc(minute),
            _enc(hour),
            _enc(self._weekday(year, month, day)),
            _enc(day),
            _enc(month),
            _enc(year - 2000),
        ]
        if self._faults.swap_bcd_nibbles:
            regs = [_swap_nibbles(b) for b in regs]
        self.i2c.write_then_read(self.addr, bytes([0x00] + regs), 0)

    def get_datetime(self) -> list[int]:
        raw = self.i2c.write_then_read(self.addr, b"\x00", 7)
        return [
            2000 + _dec(raw[6]),
            _dec(raw[5]),
            _dec(raw[4]),
            _dec(raw[2]),
            _dec(raw[1]),
            _dec(raw[0]),
        ]

    @staticmethod
    def _validate(dt: list[int]) -> tuple[int, int, int, int, int, int]:
        if len(dt) != 6:
            raise ValueError(f"datetime needs 6 fields, got {len(dt)}")
        year, month, day, hour, minute, second = (int(v) for v in dt)
        if not 2000 <= year <= 2099:
            raise ValueError(f"year {year} outside 2000..2099")
        if not 1 <= month <= 12:
            raise ValueError(f"month {month} invalid")
        max_day = _MONTH_DAYS[month - 1] + (1 if month == 2 and year % 4 == 0 else 0)
        if not 1 <= day <= max_day:
            raise ValueError(f"day {day} invalid for {year}-{month:02d}")
        if not (0 <= hour <= 23 and 0 <= minute <= 59 and 0 <= second <= 59):
            raise ValueError(f"time {hour:02d}:{minute:02d}:{second:02d} invalid")
        return year, month, day, hour, minute, second

    @staticmethod
    def _weekday(year: int, month: int, day: int) -> int:
        y = year - 1 if month < 3 else year
        w = (y + y // 4 - y // 100 + y // 400 + _SAKAMOTO[month - 1] + day) % 7
        return 7 if w == 0 else w  # 0 is Sunday in Sakamoto's scheme


# ---------------------------------------------------------------------------
# GPS driver (UART)


class GpsDriver:
    """Configures a GPS module and parses the NMEA stream it sends back."""

    def __init__(
        self, uart_end: _bus.UartEnd, scheduler: Scheduler, faults: FaultConfig = NO_FAULTS
    ) -> None:
        self.uart = uart_end
        self._scheduler = scheduler
        self._faults = faults
        self.parse_errors = 0
        uart_end.flush()  # stale bytes from before this driver existed

    def send_command(self, body: str) -> None:
        """Frame `body` as an NMEA sentence and transmit it."""
        if not body:
            raise ValueError("empty command body")
        if "$" in body or "*" in body:
            raise ValueError("body must not contain '$' or '*'")
        if not all(32 <= ord(ch) <= 126 for ch in body):
            raise ValueError("body must be printable ASCII")
        if self._faults.omit_checksum:
            line = f"${body}\r\n"
        else:
            cs = 0
            for ch in body:
                cs ^= ord(ch)
            line = f"${body}*{cs:02X}\r\n"
        self.uart.send(line.encode("ascii"))

    def get_latitude(self, timeout_ms: int) -> float:
        """Signed decimal degrees from the next valid GGA sentence.

        Lines with a bad checksum or an unparseable latitude are counted
        and skipped; raises UartTimeoutError when the window closes without
        a usable fix.
        """
        deadline = self._scheduler.now + timeout_ms
        while True:
            remaining = deadline - self._scheduler.now
            if remaining < 0:
                raise _bus.UartTimeoutError(f"no valid GGA within {timeout_ms} ms")
            raw = self.uart.recv_line(remaining)
            body = self._checked_body(raw)
            if body is None:
                self.parse_errors += 1
                continue
            fields = body.split(",")
            if not fields[0].endswith("GGA"):
                continue
            if len(fields) < 4:
                self.parse_errors += 1
                continue
            try:
                return self._to_degrees(fields[2], fields[3])
            except ValueError:
                self.parse_errors += 1

    def get_parse_errors(self) -> int:
        return self.parse_errors

    @staticmethod
    def _checked_body(raw: bytes) -> str | None:
        text = raw.decode("ascii", errors="replace").strip()
        if not text.startswith("$") or "*" not in text:
            return None
        body, _, tail = text[1:].rpartition("*")
        if len(tail) != 2:
            return None
        cs = 0
        for ch in body:
            cs ^= ord(ch)
        try:
            if int(tail, 16) != cs:
                return None
        except ValueError:
            return None
        return body

    @staticmethod
    def _to_degrees(raw: str, hemisphere: str) -> float:
        value = float(raw)
        degrees = int(value // 100)
        minutes = value - degrees * 100
        if minutes >= 60:
            raise ValueError(f"minutes field out of range in {raw!r}")
        decimal = degrees + minutes / 60.0
        if hemisphere == "S":
            return -decimal
        if hemisphere == "N":
            return decimal
        raise ValueError(f"bad hemisphere {hemisphere!r}")


# ---------------------------------------------------------------------------
# SPI master driver


class SpiMaster:
    """Plain SPI master: write, read-without-address, and full-duplex.

    CS is asserted around every operation. read(n) clocks n dummy 0x00
    bytes and returns whatever the slave supplied.
    """

    def __init__(self, spi: _bus.SpiBus, faults: FaultConfig = NO_FAULTS) -> None:
        self.spi = spi
        self._faults = faults

    def write(self, data: list[int]) -> int:
        self._transfer(bytes(data))
        return len(data)

    def read(self, n: int) -> list[int]:
        if n < 0:
            raise ValueError(f"read length must be >= 0, got {n}")
        return list(self._receive(self._transfer(bytes(n))))

    def write_read(self, data: list[int]) -> list[int]:
        return list(self._receive(self._transfer(bytes(data))))

    def _transfer(self, mosi: bytes) -> bytes:
        self.spi.assert_cs()
        try:
            return self.spi.transfer(mosi)
        finally:
            self.spi.release_cs()

    def _receive(self, miso: bytes) -> bytes:
        if self._faults.drop_first_byte and miso:
            return miso[1:] + b"\x00"
        return miso


# ---------------------------------------------------------------------------
# BLE temperature sensor


class BleTempSensor:
    """BLE peripheral exposing one float characteristic, "temp".

    start() brings the radio up after init_delay_ms of simulated time and
    begins advertising as "TempSensor"; until then the device is invisible
    to scans. An explicit init_delay_ms wins over the fault override, so
    cases that pin the delay stay unaffected by an armed fault.
    """

    def __init__(
        self,
        air: _bus.BleAir,
        scheduler: Scheduler,
        faults: FaultConfig = NO_FAULTS,
        init_delay_ms: int | None = None,
    ) -> None:
        self.air = air
        self.name = "TempSensor"
        self._scheduler = scheduler
        if init_delay_ms is not None:
            self.init_delay_ms = int(init_delay_ms)
        elif faults.ble_init_delay_ms is not None:
            self.init_delay_ms = faults.ble_init_delay_ms
        else:
            self.init_delay_ms = 0
        self.characteristics: dict[str, float | None] = {"temp": None}
        self.started = False
        self._adv_handle: EventHandle | None = None

    def start(self) -> None:
        if self.started:
            return
        self.started = True
        self._adv_handle = self._scheduler.schedule(self.init_delay_ms, self._go_live)

    def set_temperature(self, celsius: float) -> None:
        self._require_started()
        self.characteristics["temp"] = float(celsius)

    def notify(self) -> int:
        self._require_started()
        return self.air.notify(self.name, "temp", self.characteristics["temp"])

    def close(self) -> None:
        if self._adv_handle is not None:
            self._scheduler.cancel(self._adv_handle)
            self._adv_handle = None
        self.air.drop_peripheral(self.name)
        self.started = False

    def _go_live(self) -> None:
        self._adv_handle = None
        self.air.advertise(self.name, self.characteristics)

    def _require_started(self) -> None:
        if not self.started:
            raise NotStartedError("call start() first")
