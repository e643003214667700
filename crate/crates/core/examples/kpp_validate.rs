//! Checks the KPP axioms and the advection gate for a few reactions.
//!
//! cargo run --release --example kpp_validate

use kpp_lab::kpp::{gate_reaction, periodic_rate, validate_kpp, CoefficientField, KppReaction, SamplePlan};

fn main() -> kpp_lab::Result<()> {
    let plan = SamplePlan::standard(1, 20.0, 40.0);
    let field = CoefficientField::isotropic(1, 1.0).with_constant_drift(&[1.5]);
    let cases = [
        ("logistic, rate 1", KppReaction::homogeneous_logistic()),
        ("logistic, rate 2 + sin x", KppReaction::logistic(periodic_rate(2.0, 1.0))),
        ("template, rate 1 + 0.5 sin x", KppReaction::template(periodic_rate(1.0, 0.5))),
    ];
    for (name, r) in &cases {
        let rep = validate_kpp(r, &plan)?;
        let gate = gate_reaction(r, &field, &plan);
        println!("{name}: kpp={} f_u(0) in [{:.3}, {:.3}]", rep.passed(), rep.inf_deriv, rep.sup_deriv);
        for ax in &rep.axioms {
            println!("  {:<24} {} worst={:.2e}", ax.name, if ax.passed { "ok  " } else { "FAIL" }, ax.worst);
        }
        println!("  psi(0.5)={:.4}  gate with b=1.5: {} (margin {:.3})", rep.psi_at(0.5), gate.passed, gate.margin);
    }
    Ok(())
}
