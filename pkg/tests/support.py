import os
from typing import Optional

from pcodeguard.pcode.model import ProgramImage
from pcodeguard.pcode.parser import load_listing, parse_program
from pcodeguard.schemas import RunConfig
from pcodeguard.services.detection import Detector, InvariantProfile, PanicXrefSet
from pcodeguard.services.emulator import Emulator, EmulatorOptions, OutcomeKind
from pcodeguard.services.sidecars import JumpTableMap
from pcodeguard.state.machine import MachineState

FIXTURES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fixtures")

GO_FIXTURES = {
    "nil_deref": "Nil Pointer Dereference",
    "index_out_of_range": "Index Out Of Range",
    "nil_map": "Nil Map Assignment",
    "too_large_channel": "Too Large Channel Creation",
    "negative_shift": "Negative Shift",
}

C_FIXTURES = {
    "c_null_deref": "NullDeref",
    "c_misaligned": "MisalignedAccess",
    "c_uninit": "UninitializedRead",
}

SYMBOLIC_GUARD_TEMPLATE = """
0x201000 len=4
  (register,0x206,1) = INT_EQUAL (register,0x38,1) , (const,{constant:#x},1)
0x201004 len=6
  CBRANCH (ram,0x201040,8) , (register,0x206,1)
0x20100a len=7
  (register,0x0,8) = COPY (const,0xe7,8)
  (register,0x38,8) = COPY (const,0x0,8)
  CALLOTHER (const,0x5,4) , "syscall"
0x201040 len=5
  CALL (ram,0x203600,8)
0x203600 len=7
  (register,0x0,8) = COPY (const,0xe7,8)
  (register,0x38,8) = COPY (const,0x2,8)
  CALLOTHER (const,0x5,4) , "syscall"
"""


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


def load_fixture(name: str) -> ProgramImage:
    return parse_program([load_listing(fixture_path(f"{name}.pcode"))])


def image_from(text: str, base: int = 0) -> ProgramImage:
    return parse_program([("test", base, text)])


def fresh_state(pc: int = 0x201000) -> MachineState:
    state = MachineState()
    state.prepare_stack()
    state.pc = pc
    return state


def make_config(out_dir, **overrides) -> RunConfig:
    values = {
        "listings": [{"path": "in-memory.pcode"}],
        "output_dir": str(out_dir),
        "log": False,
        "trace": False,
    }
    values.update(overrides)
    return RunConfig.model_validate(values)


def make_emulator(
    img: ProgramImage,
    xrefs: Optional[PanicXrefSet] = None,
    profile: Optional[InvariantProfile] = None,
    tables: Optional[JumpTableMap] = None,
    **options,
) -> Emulator:
    detector = Detector(xrefs, profile)
    return Emulator(img, tables, detector, None, EmulatorOptions(**options))


def run_to_end(state: MachineState, emulator: Emulator, limit: int = 1000):
    for _ in range(limit):
        outcome = emulator.step(state)
        if outcome.kind is not OutcomeKind.CONTINUE:
            return outcome
    raise AssertionError("program did not terminate")
