"""Line-oriented text format for circuits, inputs, probe placement, and detection.

Grammar (one directive per line, ``#`` starts a comment, case-sensitive)::

    modes <N>
    input <mode> coherent <re> <im>
    input <mode> single-photon
    bs <a> <b> theta=<rad> phi=<rad>
    phase <mode> <rad>
    loss <mode> eta=<val>
    probe <mode> [<mode> ...]
    detect <mode>

Exactly one each of ``modes``/``input``/``probe``/``detect`` is required.
Element lines before the ``probe`` line form the pre-probe stage, lines after
it the post-probe stage.  Parsing never raises on malformed input: every
problem is collected as a :class:`ParseError` carrying a 1-based source span
pointing at the offending token's first character (missing-directive errors
point at line 1, column 1).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

from .circuits import BeamSplitter, Circuit, Loss, PhaseShifter
from .weakvalues import Coherent, SinglePhoton


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int


class ErrorKind(str, Enum):
    UNKNOWN_DIRECTIVE = "UnknownDirective"
    BAD_ARITY = "BadArity"
    BAD_NUMBER = "BadNumber"
    INDEX_OUT_OF_RANGE = "IndexOutOfRange"
    DUPLICATE_DIRECTIVE = "DuplicateDirective"
    MISSING_DIRECTIVE = "MissingDirective"


@dataclass(frozen=True)
class ParseError:
    span: SourceSpan
    kind: ErrorKind
    message: str


@dataclass(frozen=True)
class ParsedExperiment:
    circuit: Circuit
    input_state: object  # Coherent | SinglePhoton


@dataclass(frozen=True)
class ParseResult:
    experiment: object  # ParsedExperiment | None
    errors: tuple

    @property
    def ok(self) -> bool:
        return self.experiment is not None


_TOKEN = re.compile(r"\S+")

_SINGLE_DIRECTIVES = ("modes", "input", "probe", "detect")


@dataclass
class _Token:
    text: str
    span: SourceSpan


def _tokenize(line: str, line_no: int):
    comment = line.find("#")
    if comment >= 0:
        line = line[:comment]
    return [
        _Token(m.group(), SourceSpan(line_no, m.start() + 1)) for m in _TOKEN.finditer(line)
    ], SourceSpan(line_no, len(line.rstrip()) + 1)


def _parse_int(tok: _Token, errors: list):
    try:
        return int(tok.text, 10)
    except ValueError:
        errors.append(ParseError(tok.span, ErrorKind.BAD_NUMBER, f"expected an integer, got {tok.text!r}"))
        return None


def _parse_float(tok: _Token, errors: list, text: str = None):
    text = tok.text if text is None else text
    try:
        value = float(text)
    except ValueError:
        errors.append(ParseError(tok.span, ErrorKind.BAD_NUMBER, f"expected a number, got {text!r}"))
        return None
    if not math.isfinite(value):
        errors.append(ParseError(tok.span, ErrorKind.BAD_NUMBER, f"number must be finite, got {text!r}"))
        return None
    return value


def _parse_keyed(tok: _Token, key: str, errors: list):
    """Parse a 'key=<float>' token."""
    prefix = key + "="
    if not tok.text.startswith(prefix):
        errors.append(
            ParseError(tok.span, ErrorKind.BAD_ARITY, f"expected {prefix}<value>, got {tok.text!r}")
        )
        return None
    return _parse_float(tok, errors, tok.text[len(prefix):])


def _check_arity(tokens, expected: int, errors: list, eol: SourceSpan) -> bool:
    if len(tokens) - 1 < expected:
        errors.append(
            ParseError(
                eol,
                ErrorKind.BAD_ARITY,
                f"'{tokens[0].text}' needs {expected} argument(s), got {len(tokens) - 1}",
            )
        )
        return False
    if len(tokens) - 1 > expected:
        extra = tokens[expected + 1]
        errors.append(
            ParseError(
                extra.span,
                ErrorKind.BAD_ARITY,
                f"'{tokens[0].text}' takes {expected} argument(s); unexpected {extra.text!r}",
            )
        )
        return False
    return True


def parse(text: str) -> ParseResult:
    """Parse DSL text; collect every error instead of failing fast."""
    errors: list = []
    seen: dict = {}
    n_modes = None
    input_mode = None
    input_state = None
    detect_mode = None
    probe_modes: list = []
    pre: list = []
    post: list = []
    probe_seen = False
    mode_tokens: list = []  # (token, parsed index) pairs for range validation

    def element_sink():
        return post if probe_seen else pre

    def note_mode(tok, value):
        if value is not None:
            mode_tokens.append((tok, value))
        return value

    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens, eol = _tokenize(raw, line_no)
        if not tokens:
            continue
        head = tokens[0]
        name = head.text

        if name in _SINGLE_DIRECTIVES and name in seen:
            errors.append(
                ParseError(head.span, ErrorKind.DUPLICATE_DIRECTIVE, f"duplicate '{name}' directive")
            )
            continue

        if name == "modes":
            seen[name] = head.span
            if not _check_arity(tokens, 1, errors, eol):
                continue
            value = _parse_int(tokens[1], errors)
            if value is None:
                continue
            if value < 1:
                errors.append(
                    ParseError(tokens[1].span, ErrorKind.BAD_NUMBER, f"mode count must be >= 1, got {value}")
                )
                continue
            n_modes = value
        elif name == "input":
            seen[name] = head.span
            if len(tokens) >= 3 and tokens[2].text == "single-photon":
                if not _check_arity(tokens, 2, errors, eol):
                    continue
                input_mode = note_mode(tokens[1], _parse_int(tokens[1], errors))
                input_state = SinglePhoton()
            elif len(tokens) >= 3 and tokens[2].text == "coherent":
                if not _check_arity(tokens, 4, errors, eol):
                    continue
                input_mode = note_mode(tokens[1], _parse_int(tokens[1], errors))
                re_part = _parse_float(tokens[3], errors)
                im_part = _parse_float(tokens[4], errors)
                if re_part is not None and im_part is not None:
                    input_state = Coherent(complex(re_part, im_part))
            else:
                where = tokens[2].span if len(tokens) >= 3 else eol
                errors.append(
                    ParseError(
                        where,
                        ErrorKind.BAD_ARITY,
                        "input must be '<mode> coherent <re> <im>' or '<mode> single-photon'",
                    )
                )
        elif name == "bs":
            if not _check_arity(tokens, 4, errors, eol):
                continue
            a = note_mode(tokens[1], _parse_int(tokens[1], errors))
            b = note_mode(tokens[2], _parse_int(tokens[2], errors))
            theta = _parse_keyed(tokens[3], "theta", errors)
            phi = _parse_keyed(tokens[4], "phi", errors)
            if None in (a, b, theta, phi):
                continue
            if a == b:
                errors.append(
                    ParseError(tokens[2].span, ErrorKind.INDEX_OUT_OF_RANGE, "beam splitter modes must be distinct")
                )
                continue
            if not 0.0 <= theta <= math.pi / 2:
                errors.append(
                    ParseError(tokens[3].span, ErrorKind.BAD_NUMBER, f"theta must lie in [0, pi/2], got {theta}")
                )
                continue
            if a >= 0 and b >= 0:
                element_sink().append(BeamSplitter(a, b, theta, phi))
        elif name == "phase":
            if not _check_arity(tokens, 2, errors, eol):
                continue
            mode = note_mode(tokens[1], _parse_int(tokens[1], errors))
            phi = _parse_float(tokens[2], errors)
            if None in (mode, phi):
                continue
            if mode >= 0:
                element_sink().append(PhaseShifter(mode, phi))
        elif name == "loss":
            if not _check_arity(tokens, 2, errors, eol):
                continue
            mode = note_mode(tokens[1], _parse_int(tokens[1], errors))
            eta = _parse_keyed(tokens[2], "eta", errors)
            if None in (mode, eta):
                continue
            if not 0.0 <= eta <= 1.0:
                errors.append(
                    ParseError(tokens[2].span, ErrorKind.BAD_NUMBER, f"eta must lie in [0, 1], got {eta}")
                )
                continue
            if mode >= 0:
                element_sink().append(Loss(mode, eta))
        elif name == "probe":
            seen[name] = head.span
            if len(tokens) < 2:
                errors.append(
                    ParseError(eol, ErrorKind.BAD_ARITY, "'probe' needs at least one mode argument")
                )
                continue
            values = [note_mode(tok, _parse_int(tok, errors)) for tok in tokens[1:]]
            if None not in values:
                probe_modes = values
            probe_seen = True
        elif name == "detect":
            seen[name] = head.span
            if not _check_arity(tokens, 1, errors, eol):
                continue
            detect_mode = note_mode(tokens[1], _parse_int(tokens[1], errors))
        else:
            errors.append(
                ParseError(head.span, ErrorKind.UNKNOWN_DIRECTIVE, f"unknown directive {name!r}")
            )

    for directive in _SINGLE_DIRECTIVES:
        if directive not in seen:
            errors.append(
                ParseError(
                    SourceSpan(1, 1), ErrorKind.MISSING_DIRECTIVE, f"missing '{directive}' directive"
                )
            )

    if n_modes is not None:
        for tok, value in mode_tokens:
            if not 0 <= value < n_modes:
                errors.append(
                    ParseError(
                        tok.span,
                        ErrorKind.INDEX_OUT_OF_RANGE,
                        f"mode {value} out of range for {n_modes} modes",
                    )
                )

    if errors:
        return ParseResult(None, tuple(errors))

    circuit = Circuit(
        n_modes=n_modes,
        pre_probe=tuple(pre),
        post_probe=tuple(post),
        input_mode=input_mode,
        probe_modes=frozenset(probe_modes),
        detect_mode=detect_mode,
    )
    return ParseResult(ParsedExperiment(circuit, input_state), ())


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _element_line(element) -> str:
    if isinstance(element, BeamSplitter):
        return f"bs {element.mode_a} {element.mode_b} theta={_fmt(element.theta)} phi={_fmt(element.phi)}"
    if isinstance(element, PhaseShifter):
        return f"phase {element.mode} {_fmt(element.phi)}"
    if isinstance(element, Loss):
        return f"loss {element.mode} eta={_fmt(element.eta)}"
    raise TypeError(f"unknown element {element!r}")


def serialize(circuit: Circuit, input_state) -> str:
    """Canonical text form; ``parse(serialize(c, i))`` reproduces both exactly.

    Numbers carry 17 significant digits so re-parsing is bit-identical; loss
    directives are preserved (serialization happens before expansion).
    """
    lines = [f"modes {circuit.n_modes}"]
    if isinstance(input_state, Coherent):
        a = input_state.alpha
        lines.append(f"input {circuit.input_mode} coherent {_fmt(a.real)} {_fmt(a.imag)}")
    elif isinstance(input_state, SinglePhoton):
        lines.append(f"input {circuit.input_mode} single-photon")
    else:
        raise TypeError(f"unknown input state {input_state!r}")
    lines.extend(_element_line(e) for e in circuit.pre_probe)
    lines.append("probe " + " ".join(str(m) for m in sorted(circuit.probe_modes)))
    lines.extend(_element_line(e) for e in circuit.post_probe)
    lines.append(f"detect {circuit.detect_mode}")
    return "\n".join(lines) + "\n"
