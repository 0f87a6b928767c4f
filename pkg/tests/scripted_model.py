"""A deterministic stand-in for a chat model, used to author fixtures.

Recognition answers are keyed on a phrase of the ROS text; classification
answers on the extract. The canned answers include the kinds of mistakes
real models make (rephrasing, splitting, flipped status, wrong system,
hallucinated or non-entity phrases) so the fixture corpus exercises
every match category.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ros_extract.pipeline import CLS_PROMPT, NER_PROMPT, load_prompt


def _array(*pairs: tuple[str, str]) -> str:
    return json.dumps([{"extract": e, "status": s} for e, s in pairs], indent=2)


PROMPT_EXAMPLE_TEXT = "Mild fever, denies headache, no back pain, GI is negative"
PROMPT_EXAMPLE_NER = _array(("fever", "positive"), ("headache", "negative"), ("back pain", "negative"), ("GI", "negative"))

NER_RESPONSES: list[tuple[str, str]] = [
    (
        "Constitutional: Positive for fevers",
        "Here are the extracted entities:\n```json\n"
        + _array(
            ("fever", "positive"),
            ("fatigue", "positive"),
            ("weight loss", "negative"),
            ("blurry vision", "negative"),
            ("cough", "positive"),
            ("shortness of breath", "negative"),
            ("chest pain", "negative"),
        )
        + "\n```",
    ),
    (
        "GI is negative. Reports muscle or joint pain.",
        '1. "fever" - positive\n2. "headache" - negative\n3. "back pain" - negative\n'
        '4. "GI" - negative\n5. "muscle" - positive\n6. "joint pain" - positive\n\nJSON:\n'
        + _array(
            ("fever", "positive"),
            ("headache", "negative"),
            ("back pain", "negative"),
            ("GI", "negative"),
            ("muscle", "positive"),
            ("joint pain", "positive"),
        ),
    ),
    (
        "Otherwise negative except",
        _array(
            ("Otherwise", "negative"),
            ("HPI", "negative"),
            ("nausea", "negative"),
            ("vomiting", "negative"),
            ("abdominal pain", "negative"),
        ),
    ),
    (
        "productive of sputum",
        '[{"extract": "cough", "status": "Positive"}, {"extract": "cough", "status": "positive"},'
        ' {"extract": "sputum", "status": "positive"}, {"extract": "wheezing", "status": "positive"},'
        ' {"extract": "rash", "status": "negative"}, {"extract": "depression", "status": "negative"},'
        ' {"extract": "anxiety", "status": "positive"}, {"extract": "polyuria", "status": "positive"},'
        ' {"extract": "bruising", "status": "positive"},]',
    ),
    ("No dysuria.", '[{"extract": "dysuria", "status": "negative"}]'),
    (PROMPT_EXAMPLE_TEXT, PROMPT_EXAMPLE_NER),
]

CLS_RESPONSES: dict[str, str] = {
    "fever": "fever --> Constitutional Symptoms",
    "fatigue": "fatigue --> Constitutional Symptoms",
    "weight loss": "weight loss --> Constitutional Symptoms",
    "blurry vision": "blurry vision --> Eyes",
    "cough": "cough --> Respiratory",
    "shortness of breath": "shortness of breath --> Respiratory",
    "chest pain": "chest pain --> Cardiovascular",
    "headache": "headache --> Neurological",
    "back pain": "back pain --> Musculoskeletal",
    "gi": "GI --> Gastrointestinal",
    "muscle": "muscle --> Musculoskeletal",
    "joint pain": "joint pain --> Musculoskeletal",
    "otherwise": "None",
    "hpi": "I cannot classify this.",
    "nausea": "nausea --> Gastrointestinal",
    "vomiting": "vomiting --> Gastrointestinal",
    "abdominal pain": "abdominal pain --> Gastrointestinal",
    "sputum": "sputum --> Respiratory",
    "wheezing": "wheezing --> Respiratory",
    "rash": "rash --> Integumentary/Breast",
    "depression": "depression --> Psychiatric",
    "anxiety": "anxiety --> Psychiatric",
    "polyuria": "polyuria --> Genitourinary",
    "bruising": "Sure! bruising --> Hematologic/Lymphatic",
    "dysuria": "dysuria --> Genitourinary",
    "prostate": "prostate --> Genitourinary",
    "diabetes": "diabetes --> Endocrine",
}


def answer(system_prompt: str, user_message: str) -> str:
    if system_prompt == load_prompt(NER_PROMPT):
        for key, response in NER_RESPONSES:
            if key in user_message:
                return response
        return "[]"
    if system_prompt == load_prompt(CLS_PROMPT):
        return CLS_RESPONSES.get(user_message.strip().lower(), "None")
    return "I only answer the two pipeline prompts."


class ScriptedModel:
    """In-process backend with the same ``complete`` contract as the real ones."""

    kind = "scripted"

    def __init__(self) -> None:
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request, config) -> str:
        with self._lock:
            self.calls += 1
        return answer(request.system_prompt, request.user_message)


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args) -> None:
        pass

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self) -> None:
        if self.path.endswith("/models"):
            self._send(200, {"data": [{"id": "scripted"}]})
        else:
            self._send(404, {"error": "not found"})

    def do_POST(self) -> None:
        if not self.path.endswith("/chat/completions"):
            self._send(404, {"error": "not found"})
            return
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.server.requests.append(body)
        messages = {m["role"]: m["content"] for m in body["messages"]}
        content = answer(messages.get("system", ""), messages.get("user", ""))
        self._send(200, {"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]})


class ScriptedServer:
    """OpenAI-style HTTP server answering with ``answer``; use as a context manager."""

    def __enter__(self) -> ScriptedServer:
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self.httpd.requests = []
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()
        return self

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"

    @property
    def requests(self) -> list[dict]:
        return self.httpd.requests

    def __exit__(self, *exc) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
