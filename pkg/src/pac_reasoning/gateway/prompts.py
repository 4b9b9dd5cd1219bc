"""Prompt templates."""

VERBALIZED_SYSTEM_PROMPT = (
    "You are a reasoning assistant. For each question and proposed answer, "
    "you must estimate how likely the proposed answer is correct."
)

VERBALIZED_USER_TEMPLATE = (
    "Question: {question}\n"
    "Answer: {answer}\n"
    "Provide a probability (between 0.0 and 1.0) that your answer is correct. "
    "Only output the probability."
)


def verbalized_messages(question: str, answer: str) -> list[dict[str, str]]:
    return [
        {"role": "system", "content": VERBALIZED_SYSTEM_PROMPT},
        {"role": "user", "content": VERBALIZED_USER_TEMPLATE.format(question=question, answer=answer)},
    ]
