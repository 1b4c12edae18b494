"""ShortsMaker: a four-agent AutoGen group chat that produces a short video."""

import autogen

from tools import generate_images, render_video, text_to_speech

llm_config = {"config_list": [{"model": "gpt-4.1"}], "temperature": 0.7}

script_writer = autogen.AssistantAgent(
    name="script_writer",
    system_message="Write a short narration script for the topic, split into scenes.",
    llm_config=llm_config,
)
voice_actor = autogen.AssistantAgent(
    name="voice_actor",
    system_message="Turn the script into a voiceover with text_to_speech.",
    llm_config=llm_config,
)
graphic_designer = autogen.AssistantAgent(
    name="graphic_designer",
    system_message="Create one image per scene with generate_images.",
    llm_config=llm_config,
)
director = autogen.AssistantAgent(
    name="director",
    system_message="Render the video with render_video, then reply TERMINATE.",
    llm_config=llm_config,
)

autogen.register_function(text_to_speech, caller=voice_actor, executor=voice_actor)
autogen.register_function(generate_images, caller=graphic_designer, executor=graphic_designer)
autogen.register_function(render_video, caller=director, executor=director)

user = autogen.UserProxyAgent(
    name="user",
    human_input_mode="NEVER",
    is_termination_msg=lambda m: "TERMINATE" in (m.get("content") or ""),
)

groupchat = autogen.GroupChat(
    agents=[script_writer, voice_actor, graphic_designer, director],
    messages=[],
    max_round=12,
    speaker_selection_method="auto",
)
manager = autogen.GroupChatManager(groupchat=groupchat, llm_config=llm_config)


def main(topic: str) -> None:
    user.initiate_chat(manager, message=topic)
