// Decides where a typed command goes. The device grammar wins, so
// "What is that?" reaches /api/command and gets its IdentifyObject tag;
// only free-form questions about a loaded scene go to /api/vqa.

export function normalize(text: string): string {
  return text
    .toLowerCase()
    .replace(/[^a-z0-9 ]/g, "")
    .replace(/ +/g, " ")
    .trim();
}

const QUESTION_WORDS =
  ["what", "which", "where", "how", "who", "does", "do", "are", "can"];

export function isDeviceCommand(text: string): boolean {
  const n = normalize(text);
  return (
    n === "what is that" ||
    n === "help" ||
    n.startsWith("navigate to ") ||
    n.startsWith("describe") ||
    n.startsWith("how far") ||
    n.startsWith("is ")
  );
}

export function isQuestion(text: string): boolean {
  if (text.trim().endsWith("?")) return true;
  const first = normalize(text).split(" ")[0];
  return QUESTION_WORDS.includes(first);
}

export type Route = "command" | "vqa";

export function routeFor(text: string, sceneLoaded: boolean): Route {
  if (isDeviceCommand(text)) return "command";
  if (sceneLoaded && isQuestion(text)) return "vqa";
  return "command";
}
