"""Prompt template loading and rendering.

Templates are data files shipped with the package, one per request role.
Rendering is forgiving: placeholders without a value render empty, and any
context keys not referenced by the template are appended as an extra
context block so the backend always sees the full request payload.
"""
from __future__ import annotations

import string
from importlib import resources

from .base import Role

_SNAKE = {
    Role.InitHypothesis: "init_hypothesis",
    Role.ExtractChallenges: "extract_challenges",
    Role.GenerateHypothesis: "generate_hypothesis",
    Role.ScoreHypothesis: "score_hypothesis",
    Role.SelectHypothesis: "select_hypothesis",
    Role.Sketch: "sketch",
    Role.Implement: "implement",
    Role.DebugFix: "debug_fix",
    Role.AlignmentCheck: "alignment_check",
    Role.ComprehensiveAnalysis: "comprehensive_analysis",
    Role.Judge: "judge",
    Role.BudgetDecision: "budget_decision",
    Role.Embed: "embed",
}


class _Defaulting(dict):
    def __missing__(self, key):
        return ""


def load_template(role: Role) -> str:
    name = f"{_SNAKE[role]}.txt"
    ref = resources.files(__package__).joinpath("templates").joinpath(name)
    return ref.read_text(encoding="utf-8")


def render(role: Role, context: dict[str, str]) -> str:
    template = load_template(role)
    used = {
        field
        for _, field, _, _ in string.Formatter().parse(template)
        if field
    }
    body = template.format_map(_Defaulting(context))
    extra = {k: v for k, v in context.items() if k not in used}
    if extra:
        lines = [body, "", "### Additional context"]
        for key in sorted(extra):
            lines.append(f"{key}: {extra[key]}")
        body = "\n".join(lines)
    return body
