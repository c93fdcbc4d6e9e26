"""Control layer for the assistive headgear simulation.

Voice commands arrive as text and leave as spoken-style text; the audio
layer itself is out of scope. The pieces here are deliberately boring and
rule-based so they can be tested exhaustively: a fixed intent grammar, a
time-of-flight distance formula, BFS routing on a small occupancy grid,
and a three-module health map whose mode is a pure function of which
modules are down. The language model only ever enters through the
perception backend handed to dispatch().
"""

import json
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import errors

# intent kinds
DESCRIBE_SCENE = "DescribeScene"
IDENTIFY_OBJECT = "IdentifyObject"
NAVIGATE = "Navigate"
RANGE_CHECK = "RangeCheck"
VERIFY_STATEMENT = "VerifyStatement"
HELP = "Help"
UNKNOWN = "Unknown"

MODULES = ("perception", "navigation", "ranging")
HEALTHY = "Healthy"
FAILED = "Failed"

OPERATIONAL = "Operational"
DEGRADED = "Degraded"
FAILSAFE = "Failsafe"

SPEED_OF_SOUND = 343.0  # m/s in 20 C air, no temperature compensation

HEADINGS = ("N", "E", "S", "W")  # clockwise; index arithmetic gives turns
_DELTAS = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}

HELP_TEXT = ("You can say: describe the scene. What is that? "
             "Is <statement>? How far is the obstacle? "
             "Navigate to <place>. Help.")


@dataclass(frozen=True)
class Intent:
    kind: str
    raw: str
    dest: str = ""

    def __post_init__(self):
        if self.kind == NAVIGATE and not self.dest:
            raise errors.ConfigError("Navigate intent needs a destination")


def _normalize(text: str) -> str:
    text = re.sub(r"[^a-z0-9 ]", " ", text.lower())
    return " ".join(text.split())


def parse_command(text: str) -> Intent:
    """Map one utterance to an Intent via a fixed rule table.

    Unrecognized input is the Unknown intent, never an error.
    """
    norm = _normalize(text)
    if norm == "what is that":
        return Intent(IDENTIFY_OBJECT, text)
    if norm.startswith("navigate to "):
        dest = norm[len("navigate to "):].strip()
        if dest:
            return Intent(NAVIGATE, text, dest=dest)
        return Intent(UNKNOWN, text)
    if norm.startswith("describe"):
        return Intent(DESCRIBE_SCENE, text)
    if norm.startswith("how far"):
        return Intent(RANGE_CHECK, text)
    if norm.startswith("is "):
        return Intent(VERIFY_STATEMENT, text)
    if norm == "help":
        return Intent(HELP, text)
    return Intent(UNKNOWN, text)


def estimate_distance(echo_time_us: float) -> float:
    """Round-trip time of flight to one-way distance in meters."""
    if echo_time_us < 0:
        raise errors.NegativeEcho(f"echo time {echo_time_us} us")
    return SPEED_OF_SOUND * (echo_time_us * 1e-6) / 2.0


def obstacle_alert(distance_m: float, threshold_m: float = 1.0):
    """Alert strictly below the threshold; the message always carries the
    distance rounded to 0.1 m."""
    alert = distance_m < threshold_m
    if alert:
        return True, f"obstacle ahead at {distance_m:.1f} m"
    return False, f"path clear, nearest obstacle {distance_m:.1f} m"


# --- world -----------------------------------------------------------------


@dataclass
class GridWorld:
    width: int = 16
    height: int = 16
    walls: set = field(default_factory=set)
    agent: tuple = (0, 0)
    heading: str = "E"
    waypoints: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise errors.ConfigError("world must be at least 1x1")
        if self.heading not in HEADINGS:
            raise errors.ConfigError(f"bad heading {self.heading!r}")
        self.walls = {(int(r), int(c)) for r, c in self.walls}
        self.agent = (int(self.agent[0]), int(self.agent[1]))
        self.waypoints = {str(k): (int(v[0]), int(v[1]))
                          for k, v in self.waypoints.items()}
        for cell in self.walls | {self.agent} | set(self.waypoints.values()):
            if not self.in_bounds(cell):
                raise errors.ConfigError(f"cell {cell} outside the grid")
        if self.agent in self.walls:
            raise errors.ConfigError("agent cell is occupied")
        for name, cell in self.waypoints.items():
            if cell in self.walls:
                raise errors.ConfigError(f"waypoint {name!r} is occupied")

    def in_bounds(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def passable(self, cell) -> bool:
        return self.in_bounds(cell) and cell not in self.walls


def world_to_json(world: GridWorld) -> dict:
    return {
        "width": world.width,
        "height": world.height,
        "walls": sorted([r, c] for r, c in world.walls),
        "agent": {"r": world.agent[0], "c": world.agent[1],
                  "heading": world.heading},
        "waypoints": {k: [v[0], v[1]]
                      for k, v in sorted(world.waypoints.items())},
    }


def world_from_json(raw: dict) -> GridWorld:
    try:
        return GridWorld(
            width=int(raw["width"]),
            height=int(raw["height"]),
            walls={(w[0], w[1]) for w in raw.get("walls", [])},
            agent=(raw["agent"]["r"], raw["agent"]["c"]),
            heading=raw["agent"]["heading"],
            waypoints={k: (v[0], v[1])
                       for k, v in raw.get("waypoints", {}).items()},
        )
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise errors.ConfigError(f"malformed world JSON: {exc}") from exc


def save_world(world: GridWorld, path) -> None:
    Path(path).write_text(json.dumps(world_to_json(world), indent=1),
                          encoding="utf-8")


def load_world(path) -> GridWorld:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise errors.ConfigError(f"malformed world JSON: {exc}") from exc
    return world_from_json(raw)


def default_world() -> GridWorld:
    """Small indoor map used by the demo service: one inner wall with a
    doorway, the front door on the east edge, a safe corner by the agent."""
    walls = {(r, 8) for r in range(0, 12) if r != 5}
    return GridWorld(
        walls=walls,
        agent=(5, 2),
        heading="E",
        waypoints={
            "front door": (5, 15),
            "kitchen": (2, 12),
            "safe place": (8, 1),
        },
    )


# --- routing ---------------------------------------------------------------


def _bfs(world: GridWorld, start, goal):
    """Shortest path as a list of cells start..goal, or None. Neighbor
    order N,E,S,W keeps the chosen path deterministic."""
    if start == goal:
        return [start]
    prev = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        for h in HEADINGS:
            dr, dc = _DELTAS[h]
            nxt = (cell[0] + dr, cell[1] + dc)
            if nxt in prev or not world.passable(nxt):
                continue
            prev[nxt] = cell
            if nxt == goal:
                path = [nxt]
                while path[-1] is not None:
                    path.append(prev[path[-1]])
                return path[-2::-1]
            queue.append(nxt)
    return None


def _turn_instruction(current: str, target: str) -> Optional[str]:
    delta = (HEADINGS.index(target) - HEADINGS.index(current)) % 4
    return {0: None, 1: "turn right", 2: "turn around", 3: "turn left"}[delta]


def compile_instructions(path, heading: str) -> list:
    """Turn a cell path into spoken-style steps, merging straight runs."""
    instructions = []
    i = 1
    while i < len(path):
        dr = path[i][0] - path[i - 1][0]
        dc = path[i][1] - path[i - 1][1]
        direction = next(h for h, d in _DELTAS.items() if d == (dr, dc))
        turn = _turn_instruction(heading, direction)
        if turn:
            instructions.append(turn)
        heading = direction
        run = 1
        while (i + run < len(path)
               and (path[i + run][0] - path[i + run - 1][0],
                    path[i + run][1] - path[i + run - 1][1]) == (dr, dc)):
            run += 1
        unit = "step" if run == 1 else "steps"
        instructions.append(f"forward {run} {unit}")
        i += run
    instructions.append("you have arrived")
    return instructions


def plan_route(world: GridWorld, dest: str) -> list:
    if dest not in world.waypoints:
        raise errors.UnknownWaypoint(f"no waypoint named {dest!r}")
    path = _bfs(world, world.agent, world.waypoints[dest])
    if path is None:
        raise errors.NoPath(f"{dest!r} is unreachable from {world.agent}")
    return compile_instructions(path, world.heading)


def nearest_safe_place(world: GridWorld) -> str:
    """Closest reachable waypoint whose name mentions safety, ties broken
    by name order."""
    best = None
    for name in sorted(world.waypoints):
        if "safe" not in name.split():
            continue
        path = _bfs(world, world.agent, world.waypoints[name])
        if path is None:
            continue
        if best is None or len(path) < best[0]:
            best = (len(path), name)
    if best is None:
        raise errors.UnknownWaypoint("no reachable safe waypoint")
    return best[1]


def simulated_echo_us(world: GridWorld) -> float:
    """Ultrasonic ping along the agent's heading: one grid cell is one
    meter, and the grid edge reflects like a wall."""
    dr, dc = _DELTAS[world.heading]
    cell = world.agent
    cells = 0
    while True:
        nxt = (cell[0] + dr, cell[1] + dc)
        if not world.in_bounds(nxt) or nxt in world.walls:
            break
        cell = nxt
        cells += 1
    distance_m = float(cells)
    return distance_m / SPEED_OF_SOUND * 2.0 * 1e6


# --- device state ----------------------------------------------------------


def mode_of(health: dict) -> str:
    failed = {m for m in MODULES if health[m] == FAILED}
    if not failed:
        return OPERATIONAL
    if failed >= {"perception", "navigation"} or len(failed) == len(MODULES):
        return FAILSAFE
    return DEGRADED


@dataclass
class DeviceState:
    health: dict = field(
        default_factory=lambda: {m: HEALTHY for m in MODULES})
    mode: str = OPERATIONAL
    log: list = field(default_factory=list)

    def __post_init__(self):
        if set(self.health) != set(MODULES):
            raise errors.ConfigError(
                f"health map must cover exactly {MODULES}")
        for m, h in self.health.items():
            if h not in (HEALTHY, FAILED):
                raise errors.UnknownModule(f"bad health value {h!r} for {m}")
        self.mode = mode_of(self.health)

    def snapshot(self) -> dict:
        return {"health": dict(self.health), "mode": self.mode,
                "log": list(self.log)}


def set_module_health(state: DeviceState, module: str,
                      health: str) -> DeviceState:
    if module not in MODULES:
        raise errors.UnknownModule(f"no module named {module!r}")
    if health not in (HEALTHY, FAILED):
        raise errors.UnknownModule(f"bad health value {health!r}")
    state.health[module] = health
    state.mode = mode_of(state.health)
    state.log.append(f"{module} marked {health}; mode {state.mode}")
    return state


# --- dispatch --------------------------------------------------------------

# which module serves which intent; Help and Unknown need no hardware
_INTENT_MODULE = {
    DESCRIBE_SCENE: "perception",
    IDENTIFY_OBJECT: "perception",
    VERIFY_STATEMENT: "perception",
    NAVIGATE: "navigation",
    RANGE_CHECK: "ranging",
}

_CAPABILITY = {
    "perception": "scene understanding",
    "navigation": "navigation",
    "ranging": "distance sensing",
}


def _failsafe_response(world: GridWorld) -> str:
    prefix = "Warning: the device is in failsafe mode."
    try:
        name = nearest_safe_place(world)
        steps = ", ".join(plan_route(world, name))
        return f"{prefix} Please proceed to the {name}: {steps}."
    except errors.NewvisionError:
        return (f"{prefix} No route to a safe place is available; "
                "please stay where you are and call for help.")


def _apology(module: str) -> str:
    return (f"Sorry, {_CAPABILITY[module]} is unavailable right now; "
            "the rest of the device still works.")


def _perceive(intent: Intent, perception) -> str:
    if intent.kind == DESCRIBE_SCENE:
        return f"I can see {perception.describe_scene()}"
    if intent.kind == IDENTIFY_OBJECT:
        return f"I see {perception.identify_object()}"
    truth, conf = perception.verify_statement(intent.raw)
    verdict = "yes, that looks right" if truth else "no, that looks wrong"
    return f"{verdict} (confidence {conf:.2f})"


def _navigate(intent: Intent, world: GridWorld) -> str:
    dest = intent.dest
    if dest.startswith("the "):
        dest = dest[4:]
    try:
        steps = ", ".join(plan_route(world, dest))
    except errors.UnknownWaypoint:
        known = ", ".join(sorted(world.waypoints))
        return f"I do not know the way to {dest}. I know: {known}."
    except errors.NoPath:
        return f"There is no clear path to the {dest} from here."
    return f"To reach the {dest}: {steps}."


def dispatch(intent: Intent, state: DeviceState, world: GridWorld,
             perception) -> tuple:
    """Route one intent and return (response text, state).

    Failures never escape: a crashing backend marks its own module Failed
    and turns into an apology, leaving the other modules untouched.
    """
    if state.mode == FAILSAFE:
        return _failsafe_response(world), state

    if intent.kind == HELP:
        return HELP_TEXT, state
    if intent.kind == UNKNOWN:
        return f"Sorry, I did not understand that. {HELP_TEXT}", state

    module = _INTENT_MODULE[intent.kind]
    if state.health[module] == FAILED:
        return _apology(module), state

    try:
        if module == "perception":
            response = _perceive(intent, perception)
        elif module == "navigation":
            response = _navigate(intent, world)
        else:
            distance = estimate_distance(simulated_echo_us(world))
            _, response = obstacle_alert(distance)
    except Exception:
        set_module_health(state, module, FAILED)
        if state.mode == FAILSAFE:
            return _failsafe_response(world), state
        return _apology(module), state
    return response, state
