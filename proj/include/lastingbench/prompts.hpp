#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lastingbench/errors.hpp"
#include "lastingbench/types.hpp"

namespace lastingbench {

// Prompt templates. Slot markers are literal {Context}, {Question},
// {Original Answer} and {Numbered Sentences}; everything else renders verbatim.
namespace prompts {

struct Template {
    std::string body;
    std::vector<std::string> slots;
};

inline const std::map<std::string, Template>& registry() {
    static const std::map<std::string, Template> templates = {
        {"cot",
         {"Answer the question based on the given passages. The following are the passages:\n"
          "{Context}\n"
          "Answer the question based on the given passages.\n"
          "Question: {Question}\n"
          "Please first provide your answer in the format of Answer:[Your answer]. Then provide "
          "your reasoning process step-by-step.(Only include explicit clues)\n"
          "At the end of each reasoning step, include a new line that specifies the key "
          "information or reference content used in that step.\n"
          "Please ensure that the [reference content] you include is the complete original "
          "sentence or consecutive sentences from the text. Please do not change the "
          "punctuation. Do not use ellipses inside the sentence.\n"
          "Follow this format:\n"
          "Answer: [Your answer]\n"
          "Step-by-step Reasoning:\n"
          "1. [Reasoning step 1]\n"
          "[replaced by your reference content]\n"
          "2. [Reasoning step 2]\n"
          "[replaced by your reference content]",
          {"Context", "Question"}}},
        {"rewrite",
         {"You are a creative contrarian. Given the question below, and the original answer, "
          "first propose a concise alternative answer—that is, a plausible but intentionally "
          "misleading answer.\n"
          "Followed are some sentences supporting the original answer, please rewrite them. When "
          "rewriting each sentence, modify only the parts necessary to support the antifact "
          "answer. Parts unrelated to the answer must keep their original meaning. Be sure that "
          "the modified evidence sentences are sufficient to answer the original question. "
          "Output must be strictly in the specified JSON format, with no additional text.\n"
          "{\n"
          " \"answer\": \"<your antifact answer here, just provide the answer phrase, no need "
          "for complete sentence>\",\n"
          " \"revised\": [\n"
          " \"<rewritten sentence 1>\",\n"
          "\"<rewritten sentence 2>\",\n"
          "]\n"
          "}\n"
          "Question:\n"
          "{Question}\n"
          "Original answer:\n"
          "{Original Answer}\n"
          "Sentences to rewrite:\n"
          "{Numbered Sentences}",
          {"Question", "Original Answer", "Numbered Sentences"}}},
        {"qa_with_context",
         {"Answer the question based on the given passages. The following are the passages:\n"
          "{Context}\n"
          "Answer the question based on the given passages.\n"
          "Question: {Question}\n"
          "Provide only the answer, in the format of Answer:[Your answer].",
          {"Context", "Question"}}},
        {"qa_with_context_idk",
         {"Answer the question based on the given passages. The following are the passages:\n"
          "{Context}\n"
          "Answer the question based on the given passages.\n"
          "Question: {Question}\n"
          "If the passages do not support an answer, reply exactly: I don't know\n"
          "Provide only the answer, in the format of Answer:[Your answer].",
          {"Context", "Question"}}},
        {"qa_no_context",
         {"Answer the question from your own knowledge. No passages are provided.\n"
          "Question: {Question}\n"
          "If you do not know, reply exactly: I don't know\n"
          "Provide only the answer, in the format of Answer:[Your answer].",
          {"Question"}}},
        {"rephrase",
         {"Rewrite the question below so that it keeps exactly the same meaning but uses "
          "different wording. Reply with the rewritten question only.\n"
          "Question: {Question}",
          {"Question"}}},
        {"contradict",
         {"Rewrite the question below so that it logically contradicts the original, asking for "
          "the opposite of the relation in the original question. The rewritten question may be "
          "unanswerable from the original material. Reply with the rewritten question only.\n"
          "Question: {Question}",
          {"Question"}}},
    };
    return templates;
}

} // namespace prompts

// Renders a template into a single-user-message conversation. Substitution
// touches only the named slots.
inline std::vector<ChatMessage> render_prompt(const std::string& template_id,
                                              const std::map<std::string, std::string>& slots) {
    auto it = prompts::registry().find(template_id);
    if (it == prompts::registry().end())
        throw TemplateError("unknown template " + template_id);
    const auto& tmpl = it->second;

    for (const auto& slot : tmpl.slots)
        if (slots.find(slot) == slots.end()) throw TemplateError("missing slot " + slot);

    std::string body = tmpl.body;
    for (const auto& slot : tmpl.slots) {
        const std::string marker = "{" + slot + "}";
        const std::string& value = slots.at(slot);
        size_t pos = 0;
        while ((pos = body.find(marker, pos)) != std::string::npos) {
            body.replace(pos, marker.size(), value);
            pos += value.size();
        }
    }
    return {ChatMessage{"user", body}};
}

} // namespace lastingbench
