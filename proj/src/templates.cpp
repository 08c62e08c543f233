#include "asmalign/datagen.hpp"

namespace asmalign {

TemplateBank TemplateBank::defaults() {
  TemplateBank bank;

  bank.set(TaskType::simp,
           {"You are an AI Assembly Code assistant that can analyze a piece of assembly code. Using the provided "
            "assembly code, generate an objective and brief description without adding any modal particles. "
            "Instead of directly mentioning the instruction addresses or raw hexadecimal values, utilize this "
            "data to explain the code's functionality using natural language. The answer should be on one line "
            "without line break.",
            {
                "Describe the assembly code concisely.",
                "Provide a brief description of the given assembly code.",
                "Offer a succinct explanation of the assembly code presented.",
                "Summarize the functionality of the assembly code.",
                "Give a short and clear explanation of the subsequent assembly code.",
                "Share a concise interpretation of the assembly code provided.",
                "Present a compact description of the assembly code's key features.",
                "Relay a brief, clear account of the assembly code shown.",
                "Render a clear and concise summary of the assembly code.",
                "Write a terse but informative summary of the assembly code.",
                "Create a compact narrative representing the assembly code presented.",
            },
            {}});

  bank.set(TaskType::detail,
           {"You are an AI Assembly Code assistant that can analyze a piece of assembly code. You receive a "
            "sentence describing the same assembly code you are observing. Using the provided description and "
            "assembly code details, describe the code's behavior in a detailed manner. Instead of directly "
            "mentioning the instruction addresses or raw hexadecimal values, utilize this data to explain the "
            "code's functionality using natural language. Include details like: The flow of execution (e.g., "
            "loops, conditionals, function calls.) The overall functionality of the code.",
            {
                "Describe the following Assembly code in detail.",
                "Provide a detailed description of the given Assembly code.",
                "Give an elaborate explanation of the Assembly code you see.",
                "Share a comprehensive rundown of the presented Assembly code.",
                "Offer a thorough analysis of the Assembly code.",
                "Explain the various aspects of the Assembly code before you.",
                "Clarify the contents of the displayed Assembly code with great detail.",
                "Characterize the Assembly code using a well-detailed description.",
                "Break down the elements of the Assembly code in a detailed manner.",
                "Walk through the important details of the Assembly code.",
                "Portray the Assembly code with a rich, descriptive narrative.",
                "Narrate the contents of the Assembly code with precision.",
                "Analyze the Assembly code in a comprehensive and detailed manner.",
                "Illustrate the Assembly code through a descriptive explanation.",
                "Examine the Assembly code closely and share its details.",
                "Write an exhaustive depiction of the given Assembly code.",
            },
            {}});

  const std::string shared_prompt =
      "Here is the assembly code:<code>{asm}</code>. Here is the description of the code:{description}. "
      "Generate 5 rounds of conversation. Each round should start with User: for the question and AI: for the "
      "answer. Regardless of whether the answer is in points or not, the AI character's answer should be on one "
      "line without line breaks.";

  bank.set(TaskType::conv,
           {"You are an AI Assembly Code assistant, and you are analyzing a piece of assembly code. What you see is "
            "provided with some sentences, describing the same assembly code you are looking at. Answer all "
            "questions as you are analyzing the assembly code. Design a conversation between you and a person "
            "asking about this assembly code. The answers should be in a tone that an AI assistant is analyzing "
            "the assembly code and answering the question. Ask diverse questions and give corresponding answers. "
            "Include questions asking about the content of the assembly code, including: The Code Structure and "
            "Organization, The Control Flow and Logic, The Data Flow and Manipulation, The Instruction-Level "
            "Analysis. Only include questions that have definite answers: One can see the content in the "
            "assembly code that the question asks about and can answer confidently. One can determine "
            "confidently from the assembly code that it is not in the code. Do not ask any question that cannot "
            "be answered confidently. Also include complex questions that are relevant to the content in the "
            "assembly code, for example: Asking about Performance and Optimization, Asking about security and "
            "Robustness, Asking about Context and Purpose. Again, do not ask about uncertain details. Provide "
            "detailed answers when answering complex questions. For example, give detailed examples or reasoning "
            "steps to make the content more convincing and well-organized. You can include multiple paragraphs "
            "if necessary.",
            {shared_prompt},
            {}});

  bank.set(TaskType::reason,
           {"You are an AI Assembly Code assistant that can analyze a piece of assembly code. You receive a "
            "sentence describing the same assembly code you are observing. Your task is to create a plausible and "
            "challenging question about the assembly code, and provide a detailed answer that requires deep "
            "reasoning and understanding of the code. The question should not directly mention specific assembly "
            "instructions but should instead focus on the behavior, logic, and implications of the code. When "
            "creating questions and answers, follow these guidelines: Focus on Complex Reasoning, avoid directly "
            "referencing specific instructions in the question; Ensure the question is challenging and requires "
            "the user to reason about the code's content before answering; Cover Key Aspects of Assembly Code "
            "Analysis; Provide Detailed and Insightful Answers, include detailed reasoning steps; Ensure "
            "Questions Have Definite Answers; Only ask questions that can be confidently answered based on the "
            "assembly code content; Avoid questions that are speculative or cannot be determined from the code.",
            {shared_prompt},
            {}});

  return bank;
}

}  // namespace asmalign
