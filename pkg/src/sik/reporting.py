"""
Markdown and HTML summaries of design, certificate and Monte-Carlo results.
"""

import math
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import markdown
from jinja2 import Environment, FileSystemLoader
from pydantic import BaseModel

from sik.models import OutputFormat

SUFFIX_FORMATS = {
    ".md": OutputFormat.MARKDOWN,
    ".markdown": OutputFormat.MARKDOWN,
    ".html": OutputFormat.HTML,
    ".htm": OutputFormat.HTML,
}

CSS = """
    <style>
        body {
            font-family: -apple-system, BlinkMacSystemFont, 'Segoe UI', Roboto, Arial, sans-serif;
            line-height: 1.5;
            color: #222;
            max-width: 960px;
            margin: 0 auto;
            padding: 20px;
        }
        h1 { border-bottom: 2px solid #3b6ea5; padding-bottom: 6px; }
        h2 { margin-top: 28px; color: #34495e; }
        table { border-collapse: collapse; margin: 16px 0; }
        th, td {
            border: 1px solid #ccc;
            padding: 6px 10px;
            text-align: right;
            font-variant-numeric: tabular-nums;
        }
        th { background-color: #3b6ea5; color: white; }
        tr:nth-child(even) { background-color: #f4f6f8; }
        code { background-color: #f2f2f2; padding: 1px 4px; border-radius: 3px; }
        .pass { color: #1e8449; font-weight: bold; }
        .fail { color: #c0392b; font-weight: bold; }
    </style>
"""


def sci(value: Any, digits: int = 6) -> str:
    """Scientific notation for numbers; infinities and missing values spelled out."""
    if value is None:
        return "n/a"
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}e}"


def check_mark(flag: Optional[bool]) -> str:
    if flag is None:
        return "n/a"
    return "✓" if flag else "✗"


def render_html(markdown_text: str, include_css: bool = True, title: str = "sik report") -> str:
    """
    Convert Markdown to HTML, optionally wrapped in a styled standalone document.

    Args:
        markdown_text: Markdown source.
        include_css: Wrap the fragment into a full document with the default style.
        title: Document title when `include_css` is set.

    Returns:
        HTML string.
    """
    html_content = markdown.markdown(markdown_text, extensions=["tables", "fenced_code", "toc"])
    if not include_css:
        return html_content
    return f"""<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>{title}</title>
    {CSS}
</head>
<body>
{html_content}
</body>
</html>
"""


class ReportRenderer:
    """
    Renders result models through Jinja2 Markdown templates.

    Templates are looked up as `<name>.md.j2`; HTML output converts the
    rendered Markdown with `render_html`.
    """

    def __init__(
        self,
        templates_dir: Optional[Path] = None,
        custom_filters: Optional[Dict[str, Callable[..., Any]]] = None,
    ):
        """
        Args:
            templates_dir: Custom templates directory; the bundled templates by default.
            custom_filters: Extra Jinja2 filters, overriding the defaults by name.
        """
        if templates_dir is None:
            templates_dir = Path(__file__).parent / "templates"
        self.templates_dir = Path(templates_dir)
        self.env = Environment(
            loader=FileSystemLoader(str(self.templates_dir)),
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
        )
        self.env.filters["sci"] = sci
        self.env.filters["check"] = check_mark
        for name, func in (custom_filters or {}).items():
            self.env.filters[name] = func

    @staticmethod
    def _context(context: Dict[str, Any]) -> Dict[str, Any]:
        out = {}
        for key, value in context.items():
            if isinstance(value, BaseModel):
                out[key] = value.model_dump(mode="python")
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], BaseModel):
                out[key] = [v.model_dump(mode="python") for v in value]
            else:
                out[key] = value
        return out

    def render(
        self,
        name: str,
        context: Dict[str, Any],
        output_format: OutputFormat = OutputFormat.MARKDOWN,
    ) -> str:
        """
        Render template `name` with `context` (pydantic models are dumped first).

        Raises:
            ValueError: For formats other than Markdown and HTML.
        """
        if output_format not in (OutputFormat.MARKDOWN, OutputFormat.HTML):
            raise ValueError(f"cannot render a summary as {output_format.value}")
        template = self.env.get_template(f"{name}.md.j2")
        text = template.render(**self._context(context))
        if output_format == OutputFormat.HTML:
            return render_html(text, title=str(context.get("title", "sik report")))
        return text

    def render_to_file(
        self,
        name: str,
        context: Dict[str, Any],
        output_path: Union[str, Path],
        output_format: Optional[OutputFormat] = None,
    ) -> Path:
        """Render and write; the format is inferred from the suffix when not given."""
        output_path = Path(output_path)
        if output_format is None:
            output_format = SUFFIX_FORMATS.get(output_path.suffix.lower(), OutputFormat.MARKDOWN)
        content = self.render(name, context, output_format)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "w") as f:
            f.write(content)
        return output_path

    def list_templates(self) -> list:
        return sorted(p.name[: -len(".md.j2")] for p in self.templates_dir.glob("*.md.j2"))
