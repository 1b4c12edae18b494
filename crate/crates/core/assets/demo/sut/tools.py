def text_to_speech(text: str, voice: str = "warm") -> str:
    return "voiceover.wav"


def generate_images(prompts: list[str]) -> list[str]:
    return [f"scene_{i + 1}.png" for i in range(len(prompts))]


def render_video(audio: str, images: list[str]) -> str:
    return "short.mp4"
