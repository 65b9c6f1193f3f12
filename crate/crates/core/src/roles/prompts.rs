use crate::agents::{Mode, Observations, Role};
use crate::bus::Message;
use crate::exec::efficiency_pct;

/// Placeholders recognized by [`render_prompt`].
pub const TEMPLATE_SLOTS: [&str; 9] =
    ["{agent}", "{role}", "{tick}", "{requirements}", "{sota}", "{budget}", "{changelog}", "{inbox}", "{notes}"];

const GRAMMAR: &str = "\
Answer with one action per line:
ACTION send <AGENT|BROADCAST> :: <text>
ACTION generate <version> [parent=<version>] <label words> <PARAM>=<value>...
ACTION submit <version>
ACTION record <version> valid|invalid|failed [note]
ACTION review <version>
ACTION publish <version>
ACTION target <tolerance>
ACTION spawn <PM|SE|PG|CD>
ACTION invalidate <version> <reason>
ACTION report
ACTION terminate project|self [reason]
ACTION noop
A generate line may be followed by a fenced code block holding gemm.cu.";

pub fn default_template(role: Role, mode: Mode) -> String {
    let duty = match (mode, role) {
        (Mode::Solo, _) => {
            "You are the only agent on this project. Write GEMM kernel candidates, run them, judge their \
             accuracy, review your own code against the requirements, publish the best valid version and \
             decide when to stop."
        }
        (_, Role::PM) => {
            "You are the project manager. Staff the team within the roster, set the accuracy target, keep \
             the budget and time limits, invalidate versions that break the requirements and stop the project."
        }
        (_, Role::SE) => {
            "You are the system engineer. Track the best valid version, report performance and budget \
             trends, and tell the PM about anything inconsistent in the change log."
        }
        (_, Role::PG) => {
            "You are a programmer. Propose one GEMM kernel candidate at a time, submit it, and record whether \
             it met the accuracy target."
        }
        (_, Role::CD) => {
            "You are the deployment reviewer. Lint every recorded candidate against the prohibited \
             libraries, check it for personal data and publish the best clean version."
        }
    };
    format!(
        "{duty}\n\nAgent: {{agent}} ({{role}}), tick {{tick}}.\n\nRequirements as you remember them:\n{{requirements}}\n\n\
         Best valid version: {{sota}}\nBudget: {{budget}}\n\nChange log:\n{{changelog}}\n\nNotes:\n{{notes}}\n\n\
         Inbox:\n{{inbox}}\n\n{GRAMMAR}\n"
    )
}

fn requirements_slot(obs: &Observations) -> String {
    let mem = &obs.me.memory;
    let prohibited = if mem.prohibitions.is_empty() { "(none)".to_string() } else { mem.prohibitions.join(", ") };
    let tol = mem.tolerance.or(obs.tolerance).map_or("(unset)".to_string(), |t| format!("{t:e}"));
    format!(
        "Prohibited libraries: {prohibited}\nAccuracy tolerance: {tol}\nTime limit: {} min (reference {})",
        obs.spec.time_limits.max, obs.spec.time_limits.reference
    )
}

fn sota_slot(obs: &Observations) -> String {
    match obs.changelog.sota() {
        Some((v, g)) => {
            let eff = efficiency_pct(g, obs.peak_gflops()).unwrap_or(0.0);
            format!("v{v} {g:.1} GFLOPS ({eff:.2}%)")
        }
        None => "none yet".into(),
    }
}

fn budget_slot(obs: &Observations) -> String {
    format!(
        "{} of {} points spent ({:?})",
        obs.ledger.spent_points.round_dp(3),
        obs.spec.budget.max_points,
        obs.budget_status()
    )
}

fn changelog_slot(obs: &Observations) -> String {
    let rows: Vec<String> = obs
        .changelog
        .current()
        .iter()
        .map(|c| {
            let perf = c.metrics.as_ref().map_or("-".to_string(), |m| format!("{:.1} GFLOPS", m.gflops));
            format!("v{} {} {} [{}] by {}", c.version, perf, c.status, c.label, c.author)
        })
        .collect();
    if rows.is_empty() {
        "(empty)".into()
    } else {
        rows.join("\n")
    }
}

/// Short state summary kept across a compaction.
pub fn digest(obs: &Observations) -> String {
    let mine = obs.changelog.current().iter().filter(|c| c.author == obs.me.id).count();
    format!("Tick {}. SOTA {}. Budget {}. Candidates of mine: {mine}.", obs.tick, sota_slot(obs), budget_slot(obs))
}

pub fn render_prompt(template: &str, obs: &Observations, inbox: &[Message]) -> String {
    let inbox_text =
        if inbox.is_empty() { "(empty)".to_string() } else { inbox.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("\n") };
    let notes = if obs.me.memory.notes.is_empty() { "(none)".to_string() } else { obs.me.memory.notes.join("\n") };
    template
        .replace("{agent}", &obs.me.id)
        .replace("{role}", &obs.me.role.to_string())
        .replace("{tick}", &obs.tick.to_string())
        .replace("{requirements}", &requirements_slot(obs))
        .replace("{sota}", &sota_slot(obs))
        .replace("{budget}", &budget_slot(obs))
        .replace("{changelog}", &changelog_slot(obs))
        .replace("{notes}", &notes)
        .replace("{inbox}", &inbox_text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roles::testing::Fixture;

    #[test]
    fn every_slot_is_filled() {
        let fx = Fixture::new();
        for role in [Role::PM, Role::SE, Role::PG, Role::CD] {
            let t = default_template(role, Mode::Multi);
            for slot in TEMPLATE_SLOTS {
                assert!(t.contains(slot), "{role} {slot}");
            }
            let out = render_prompt(&t, &fx.observations("PG1.1"), &[]);
            assert!(!TEMPLATE_SLOTS.iter().any(|s| out.contains(s)));
            assert!(out.contains("Prohibited libraries: cuBLAS, MKL"));
        }
    }

    #[test]
    fn forgotten_prohibitions_vanish_from_prompt() {
        let mut fx = Fixture::new();
        fx.registry.get_mut("PG1.1").unwrap().memory.prohibitions.clear();
        let out = render_prompt(&default_template(Role::PG, Mode::Multi), &fx.observations("PG1.1"), &[]);
        assert!(out.contains("Prohibited libraries: (none)"));
    }
}
