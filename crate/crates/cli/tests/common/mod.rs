//! Synthetic Spanish corpora and scripted-model fixtures shared by the CLI tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub const LONG: &[&str] = &[
    "La Concejalía de Deportes comunica que las instalaciones municipales permanecerán abiertas durante el periodo estival con horario ampliado.",
    "Las personas interesadas deberán formalizar la inscripción presentando la documentación requerida en la oficina de atención ciudadana.",
    "La biblioteca municipal amplía temporalmente el horario de préstamo con motivo del periodo de exámenes universitarios.",
    "El centro de salud recuerda a la población la conveniencia de acudir a la campaña de vacunación antes de finalizar el mes.",
    "La exposición fotográfica, procedente del archivo municipal, podrá visitarse en la sala de cultura hasta finales de septiembre.",
    "Los menores de doce años podrán acceder gratuitamente siempre que vayan acompañados por una persona adulta responsable.",
];

pub const SHORT: &[&str] = &[
    "La piscina abre en verano.",
    "Puedes apuntarte en la oficina.",
    "Lleva tu documento.",
    "La biblioteca abre más horas.",
    "Vacúnate este mes.",
    "La exposición está en la sala de cultura.",
    "Los niños entran gratis.",
    "Hay más horario.",
];

pub fn doc_id(prefix: &str, i: usize) -> String {
    format!("{prefix}{i:02}")
}

/// Substring that occurs only in prompts about this document.
pub fn marker(id: &str) -> String {
    format!("expediente {id}.")
}

pub fn pick<'a>(pool: &[&'a str], i: usize, n: usize, stride: usize) -> Vec<&'a str> {
    (0..n).map(|j| pool[(i * stride + j * 5 + 1) % pool.len()]).collect()
}

pub fn corpus(prefix: &str, n: usize) -> Vec<Value> {
    (0..n)
        .map(|i| {
            let id = doc_id(prefix, i);
            let source = format!("Aviso del {} {}", marker(&id), pick(LONG, i, 3, 1).join(" "));
            let mut reference = format!("Expediente {id}. {}", pick(SHORT, i, 3, 3).join(" "));
            if i % 3 == 0 {
                reference.push(' ');
                reference.push_str(&pick(LONG, i + 1, 2, 1).join(" "));
            }
            json!({"id": id, "source": source, "reference": reference, "task": if i % 2 == 0 { "PL" } else { "ER" }})
        })
        .collect()
}

pub fn response(analysis: &str, correction: &str) -> String {
    format!("# Análisis de la adaptación\n{analysis}\n\n# Corrección\n{correction}\n\n# Final\nSin notas.")
}

pub fn adapt_fixture(prefix: &str, n: usize) -> Vec<Value> {
    (0..n)
        .map(|i| {
            let id = doc_id(prefix, i);
            let text = format!("Expediente {id}. {} {}", LONG[i % LONG.len()], pick(SHORT, i, 2, 1).join(" "));
            json!({"match": marker(&id), "response": text})
        })
        .collect()
}

/// Five post-editing replies per document, mixing better, worse and unusable ones.
pub fn refine_fixture(prefix: &str, n: usize, variant: usize) -> Vec<Value> {
    let mut out = Vec::new();
    for i in 0..n {
        let id = doc_id(prefix, i);
        let m = marker(&id);
        let replies = [
            response("Frases largas.", &format!("Expediente {id}. {}", pick(SHORT, i + variant, 3, 1).join(" "))),
            "Lo siento, no puedo ayudar con eso.".to_owned(),
            response("Falta información.", &format!("Expediente {id}. {}", pick(LONG, i + variant, 2, 1).join(" "))),
            response("ADAPTACIÓN A CORREGIR", &format!("{} {}", SHORT[(i + variant) % SHORT.len()], SHORT[i % SHORT.len()])),
            response("Bien.", ""),
        ];
        for k in 0..replies.len() {
            let r = &replies[(k + variant) % replies.len()];
            out.push(json!({"match": m, "response": r}));
        }
    }
    out
}

pub fn write_jsonl(path: &Path, rows: &[Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

pub fn apec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apec"))
        .current_dir(dir)
        .args(args)
        .env_remove("LLM_ENDPOINT")
        .env_remove("EMB_ENDPOINT")
        .output()
        .expect("binary runs")
}

/// Writes the 10-document dev corpus, a 16-document training corpus and the
/// scripted fixtures into `dir`.
pub fn seed_workspace(dir: &Path) -> Vec<PathBuf> {
    let files = [
        ("dev.jsonl", corpus("D", 10)),
        ("train.jsonl", corpus("T", 16)),
        ("adapt_fixture.jsonl", adapt_fixture("D", 10)),
        ("refine_a.jsonl", refine_fixture("D", 10, 0)),
        ("refine_b.jsonl", refine_fixture("D", 10, 2)),
    ];
    files
        .iter()
        .map(|(name, rows)| {
            let p = dir.join(name);
            write_jsonl(&p, rows);
            p
        })
        .collect()
}
